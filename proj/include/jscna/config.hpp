#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "jscna/channel.hpp"
#include "jscna/codec.hpp"
#include "jscna/denoiser.hpp"
#include "jscna/schedule.hpp"
#include "jscna/training.hpp"

namespace jscna {

/// Everything a run depends on. Text form is `key = value` lines with dotted
/// section names; see README for the schema.
struct ExperimentConfig {
  int T = 1000;
  double beta_start = NoiseSchedule::kDefaultBetaStart;
  double beta_end = NoiseSchedule::kDefaultBetaEnd;

  std::vector<ChannelKind> channel_kinds{ChannelKind::awgn, ChannelKind::rayleigh};
  std::vector<double> snrs_db{0.0, 5.0, 10.0, 15.0, 20.0};
  double gain_floor = 0.1;

  /// Patch count N; must be a perfect square.
  int patches = 16;
  int n_min = 100;
  int n_max = 200;

  std::vector<DecodeMode> modes{DecodeMode::adaptive, DecodeMode::fixed};
  int fixed_steps = 150;
  AlignMode align = AlignMode::matched;
  PatchScheduleMode patch_schedule = PatchScheduleMode::strided;
  SigmaMode sigma = SigmaMode::posterior;
  int attention_level = -1;

  std::string denoiser_preset = "desk";
  DenoiserConfig denoiser = DenoiserConfig::desk();

  TrainingConfig training;
  int checkpoint_interval = 1000;

  std::string train_dir;
  std::vector<std::string> eval_dirs;
  int image_size = 32;
  int train_limit = 0;  ///< 0 = all files
  int eval_limit = 200;

  std::string output_dir = "out";
  std::uint64_t seed = 0;
  /// Write measured ms_per_image into results.csv. Off by default so the
  /// CSV is a pure function of (seed, config, checkpoint).
  bool record_timing = false;

  void validate() const;
  [[nodiscard]] PatchGrid grid() const;
  [[nodiscard]] NoiseSchedule schedule() const;
  /// Transmission settings for one sweep cell.
  [[nodiscard]] TransmitConfig transmit_config(ChannelKind kind, double snr_db, DecodeMode mode) const;

  /// Canonical key -> value map covering every key.
  [[nodiscard]] std::map<std::string, std::string> to_map() const;
  /// Sorted `key = value` lines; parse_config(serialize()) round-trips.
  [[nodiscard]] std::string serialize() const;
  /// FNV-1a 64 over serialize(), as 16 hex digits.
  [[nodiscard]] std::string hash() const;
};

/// Sets one key from its text form. Throws ConfigError for unknown keys or
/// malformed values.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Parses config text. A `denoiser.preset` line is applied before any other
/// denoiser key regardless of position. The result is validated.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Applies `key=value` overrides in order, then re-validates.
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& assignments);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace jscna
