#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jscna/config.hpp"

namespace jscna {

struct ProfileEntry {
  std::string label;  ///< "adaptive", "fixed@200", ...
  DecodeMode mode = DecodeMode::adaptive;
  int fixed_steps = 0;
  double median_ms = 0.0;    ///< median wall-clock of one full transmit per image
  double patch_updates = 0.0;  ///< mean per image
  double estimator_calls = 0.0;
  double psnr_db = 0.0;
  double ms_ssim = 0.0;
};

struct ProfileReport {
  std::size_t parameters = 0;
  std::uint64_t macs_per_eval = 0;
  int image_size = 0;
  double snr_db = 0.0;
  ChannelKind channel = ChannelKind::awgn;
  int warmups = 0;
  int repeats = 0;
  std::vector<ProfileEntry> entries;

  [[nodiscard]] std::string to_text() const;
  [[nodiscard]] std::string to_json() const;
};

struct ProfileOptions {
  int warmups = 3;
  int repeats = 20;
  /// Channel cell used for the timing runs.
  ChannelKind channel = ChannelKind::awgn;
  double snr_db = 10.0;
};

/// Parameter count, analytic MACs, and adaptive vs fixed decode cost.
/// Fixed mode is measured at n_max and, when different, at cfg.fixed_steps.
/// Timing cycles through `images`; quality and update counts average over
/// all of them.
ProfileReport profile(const ExperimentConfig& cfg, const DenoiserNetwork& net, std::span<const Tensor> images,
                      const ProfileOptions& opts = {});

}  // namespace jscna
