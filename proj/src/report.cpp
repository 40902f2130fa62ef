#include "jscna/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>

namespace fs = std::filesystem;

namespace jscna {
namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("emit_report: cannot write '" + path + "'");
  f << text;
  if (!f) throw std::runtime_error("emit_report: write to '" + path + "' failed");
}

// Round step for roughly five ticks over [lo, hi].
double tick_step(double lo, double hi) {
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

std::string tick_label(double v, double step) {
  if (step >= 1.0) return fmt("%.0f", v);
  if (step >= 0.1) return fmt("%.1f", v);
  if (step >= 0.01) return fmt("%.2f", v);
  return fmt("%.3f", v);
}

}  // namespace

std::string results_csv(const SweepResult& result, bool record_timing) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const SweepRow& r : result.rows) {
    out += r.dataset + "," + to_string(r.channel) + "," + fmt("%g", r.snr_db) + "," + to_string(r.mode) + ",";
    if (r.ok) {
      out += fmt("%.4f", r.psnr_db) + "," + fmt("%.6f", r.ms_ssim) + "," + fmt("%.2f", r.patch_updates) + ",";
      out += record_timing ? fmt("%.3f", r.ms_per_image) : "NA";
    } else {
      out += "NA,NA,NA,NA";
    }
    out += "\n";
  }
  return out;
}

void write_line_plot(const std::string& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<PlotSeries>& series) {
  constexpr int kW = 640, kH = 440, kLeft = 70, kRight = 150, kTop = 40, kBottom = 55;
  cv::Mat img(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (x0 > x1) x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  if (x1 - x0 < 1e-9) x0 -= 1.0, x1 += 1.0;
  const double pad = std::max(1e-3, 0.08 * (y1 - y0));
  y0 -= pad;
  y1 += pad;

  const int pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + static_cast<int>(std::lround((x - x0) / (x1 - x0) * pw)); };
  const auto py = [&](double y) { return kTop + ph - static_cast<int>(std::lround((y - y0) / (y1 - y0) * ph)); };
  const cv::Scalar black(0, 0, 0), grey(225, 225, 225);
  const int font = cv::FONT_HERSHEY_SIMPLEX;

  const double xs = tick_step(x0, x1), ys = tick_step(y0, y1);
  for (double v = std::ceil(x0 / xs) * xs; v <= x1 + 1e-9; v += xs) {
    cv::line(img, {px(v), kTop}, {px(v), kTop + ph}, grey, 1);
    cv::putText(img, tick_label(v, xs), {px(v) - 10, kTop + ph + 18}, font, 0.4, black, 1, cv::LINE_AA);
  }
  for (double v = std::ceil(y0 / ys) * ys; v <= y1 + 1e-12; v += ys) {
    cv::line(img, {kLeft, py(v)}, {kLeft + pw, py(v)}, grey, 1);
    cv::putText(img, tick_label(v, ys), {8, py(v) + 4}, font, 0.4, black, 1, cv::LINE_AA);
  }
  cv::rectangle(img, {kLeft, kTop}, {kLeft + pw, kTop + ph}, black, 1);
  cv::putText(img, title, {kLeft, 24}, font, 0.55, black, 1, cv::LINE_AA);
  cv::putText(img, x_label, {kLeft + pw / 2 - 30, kH - 12}, font, 0.45, black, 1, cv::LINE_AA);
  cv::putText(img, y_label, {kLeft + pw + 12, kTop + ph + 18}, font, 0.4, black, 1, cv::LINE_AA);

  static const cv::Scalar palette[] = {{200, 80, 30}, {40, 40, 220}, {40, 160, 40}, {160, 40, 160}, {20, 140, 200}};
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const cv::Scalar col = palette[k % std::size(palette)];
    cv::Point prev{-1, -1};
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) {
        prev = {-1, -1};
        continue;
      }
      const cv::Point p{px(s.x[i]), py(s.y[i])};
      if (prev.x >= 0) cv::line(img, prev, p, col, 2, cv::LINE_AA);
      cv::circle(img, p, 4, col, cv::FILLED, cv::LINE_AA);
      prev = p;
    }
    const int ly = kTop + 16 + static_cast<int>(k) * 20;
    cv::line(img, {kLeft + pw + 12, ly}, {kLeft + pw + 36, ly}, col, 2, cv::LINE_AA);
    cv::putText(img, s.label, {kLeft + pw + 42, ly + 4}, font, 0.45, black, 1, cv::LINE_AA);
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path, img);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw std::runtime_error("write_line_plot: cannot write '" + path + "'");
}

std::vector<std::string> emit_report(const SweepResult& result, const ExperimentConfig& cfg,
                                     const std::string& out_dir, const std::string& checkpoint) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw std::runtime_error("emit_report: cannot create '" + out_dir + "'");
  std::vector<std::string> written;
  const auto path = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };

  write_text(path("results.csv"), results_csv(result, cfg.record_timing));
  written.push_back(path("results.csv"));

  std::string timing = "dataset,channel,snr_db,mode,ms_per_image\n";
  for (const SweepRow& r : result.rows) {
    timing += r.dataset + "," + to_string(r.channel) + "," + fmt("%g", r.snr_db) + "," + to_string(r.mode) + "," +
              (r.ok ? fmt("%.3f", r.ms_per_image) : "NA") + "\n";
  }
  write_text(path("timing.csv"), timing);
  written.push_back(path("timing.csv"));

  // Group rows into (dataset, channel) panels with one series per mode.
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::pair<PlotSeries, PlotSeries>>> panels;
  for (const SweepRow& r : result.rows) {
    auto& [ps, ss] = panels[{r.dataset, to_string(r.channel)}][to_string(r.mode)];
    ps.label = ss.label = to_string(r.mode);
    ps.x.push_back(r.snr_db);
    ss.x.push_back(r.snr_db);
    ps.y.push_back(r.ok ? r.psnr_db : NAN);
    ss.y.push_back(r.ok ? r.ms_ssim : NAN);
  }
  for (const auto& [key, modes] : panels) {
    std::vector<PlotSeries> psnr_series, ssim_series;
    for (const auto& [mode, pair] : modes) {
      psnr_series.push_back(pair.first);
      ssim_series.push_back(pair.second);
    }
    const std::string stem = key.first + "_" + key.second;
    write_line_plot(path("psnr_" + stem + ".png"), key.first + " / " + key.second + ": PSNR", "channel SNR (dB)",
                    "PSNR (dB)", psnr_series);
    write_line_plot(path("ms_ssim_" + stem + ".png"), key.first + " / " + key.second + ": MS-SSIM",
                    "channel SNR (dB)", "MS-SSIM", ssim_series);
    written.push_back(path("psnr_" + stem + ".png"));
    written.push_back(path("ms_ssim_" + stem + ".png"));
  }

  std::string manifest;
  manifest += "config_hash = " + cfg.hash() + "\n";
  manifest += "seed = " + std::to_string(cfg.seed) + "\n";
  manifest += "checkpoint = " + checkpoint + "\n";
  manifest += "rows = " + std::to_string(result.rows.size()) + "\n";
  manifest += "failed_cells = " + std::to_string(result.failures()) + "\n";
  for (const SweepRow& r : result.rows) {
    if (!r.ok) {
      manifest += "failure = " + r.dataset + "," + to_string(r.channel) + "," + fmt("%g", r.snr_db) + "," +
                  to_string(r.mode) + ": " + r.error + "\n";
    }
  }
  manifest += "\n[config]\n" + cfg.serialize();
  write_text(path("manifest.txt"), manifest);
  written.push_back(path("manifest.txt"));
  return written;
}

}  // namespace jscna
