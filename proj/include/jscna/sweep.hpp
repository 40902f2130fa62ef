#pragma once

#include <span>
#include <string>
#include <vector>

#include "jscna/config.hpp"
#include "jscna/dataset.hpp"

namespace jscna {

struct SweepRow {
  std::string dataset;
  ChannelKind channel = ChannelKind::awgn;
  double snr_db = 0.0;
  DecodeMode mode = DecodeMode::adaptive;
  double psnr_db = 0.0;
  double ms_ssim = 0.0;
  /// Mean total patch-updates per image.
  double patch_updates = 0.0;
  double ms_per_image = 0.0;
  bool ok = true;
  std::string error;
};

struct SweepResult {
  /// One row per (dataset, kind, snr, mode), in that nesting order; failed
  /// cells keep their row with ok = false.
  std::vector<SweepRow> rows;

  [[nodiscard]] int failures() const;
};

/// Evaluates every grid cell over the given datasets. Cell (d, k, s) draws
/// its channel and decoder noise from derive_seed(cfg.seed, cell), shared by
/// all modes so adaptive and fixed see identical channel realizations.
/// `scorer` defaults to the network's own attention.
SweepResult run_sweep(const ExperimentConfig& cfg, const DenoiserNetwork& net, std::span<const Dataset> datasets,
                      const ImportanceScorer* scorer = nullptr);

/// Loads the checkpoint against cfg.denoiser and the eval directories, then
/// runs the sweep.
SweepResult run_sweep(const ExperimentConfig& cfg, const std::string& checkpoint);

}  // namespace jscna
