#pragma once

#include <string>
#include <vector>

#include "jscna/config.hpp"
#include "jscna/sweep.hpp"

namespace jscna {

inline constexpr const char* kResultsHeader =
    "dataset,channel,snr_db,mode,psnr_db,ms_ssim,patch_updates,ms_per_image";

/// results.csv contents. Failed cells print NA metrics; ms_per_image is NA
/// unless `record_timing`.
std::string results_csv(const SweepResult& result, bool record_timing);

/// One line per (dataset, channel, mode) series point, for plotting.
struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line chart PNG with labelled axes and a legend.
void write_line_plot(const std::string& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<PlotSeries>& series);

/// Writes results.csv, timing.csv, psnr_<dataset>_<channel>.png,
/// ms_ssim_<dataset>_<channel>.png and manifest.txt into `out_dir`.
/// Returns the paths written.
std::vector<std::string> emit_report(const SweepResult& result, const ExperimentConfig& cfg,
                                     const std::string& out_dir, const std::string& checkpoint = "");

}  // namespace jscna
