#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jscna/channel.hpp"
#include "jscna/denoiser.hpp"
#include "jscna/rng.hpp"
#include "jscna/schedule.hpp"
#include "jscna/tensor.hpp"

namespace jscna {

/// A diffusion state: values at timestep t, produced by dividing by norm_scale.
struct LatentSignal {
  Tensor values;
  int t = 0;
  double norm_scale = 1.0;
};

/// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise.
Tensor forward_diffuse(const Tensor& x0, const Tensor& noise, int t, const NoiseSchedule& s);

/// Noises x0 to step t, normalizes to unit mean power, and pre-compensates
/// the channel gains. `values` is the transmitted tensor.
LatentSignal encode(const Tensor& x0, int t, const ChannelRealization& ch, const NoiseSchedule& s, Rng& rng);

enum class AlignMode {
  matched,  ///< rescale and retag to the timestep whose noise level matches
  literal,  ///< undo normalization only and keep the encoder's t
};

/// Maps a received tensor back onto the forward-diffusion manifold. In
/// matched mode the combined diffusion and channel noise picks the effective
/// timestep t' >= t and the amplitude is rescaled to sqrt(alpha_bar_t').
LatentSignal align_received(const Tensor& y, int t, const ChannelRealization& ch, double norm_scale,
                            const NoiseSchedule& s, AlignMode mode = AlignMode::matched);

/// Column means of a row-stochastic attention map: how much every patch is
/// attended to on average.
std::vector<double> importance_weights(const AttentionMap& a);

struct StepAllocation {
  std::vector<double> weights;
  std::vector<double> norm_weights;
  std::vector<int> steps;
  int n_min = 0;
  int n_max = 0;
  PatchGrid grid;

  [[nodiscard]] long long total_updates() const;
};

/// Linear mapping of normalized importance onto [n_min, n_max], rounded half
/// away from zero. Equal weights all map to the midpoint.
StepAllocation allocate_steps(std::span<const double> weights, int n_min, int n_max, PatchGrid grid);

/// Same budget everywhere (the non-adaptive ablation).
StepAllocation uniform_allocation(int steps, PatchGrid grid);

enum class PatchScheduleMode {
  strided,    ///< every patch runs an evenly strided path from t_start to 1
  countdown,  ///< patch i takes the first n_i global steps, then freezes
};

struct MaskSchedule {
  PatchGrid grid;
  /// Global trajectory, descending from t_start to 1.
  std::vector<int> timesteps;
  /// masks[k][i] != 0 when patch i is updated at global step k.
  std::vector<std::vector<std::uint8_t>> masks;
  /// targets[k][i]: timestep patch i jumps to at step k (-1 when inactive).
  std::vector<std::vector<int>> targets;
  std::vector<std::vector<int>> per_patch_sequences;

  [[nodiscard]] long long total_updates() const;
};

MaskSchedule build_mask_schedule(const StepAllocation& alloc, int t_start,
                                 PatchScheduleMode mode = PatchScheduleMode::strided);

/// Masked reverse diffusion. Each global step evaluates the estimator once on
/// the full tensor and writes the update only into active patches. Returns
/// the final state clamped to [-1, 1].
Tensor decode(const LatentSignal& y, const MaskSchedule& schedule, const NoiseEstimator& estimator,
              const NoiseSchedule& s, Rng& rng, SigmaMode sigma = SigmaMode::posterior);

/// Unmasked reverse diffusion along `timesteps` (descending, ending the walk
/// at 0). Reference path for the masked decoder.
Tensor reverse_diffusion(const Tensor& x_start, std::span<const int> timesteps,
                         const NoiseEstimator& estimator, const NoiseSchedule& s, Rng& rng,
                         SigmaMode sigma = SigmaMode::posterior);

/// Estimator that knows the clean image and returns the exact residual noise
/// of a state at timestep t. Used to verify the reverse algebra.
class OracleNoiseEstimator final : public NoiseEstimator {
 public:
  OracleNoiseEstimator(Tensor x0, const NoiseSchedule& s) : x0_(std::move(x0)), s_(s) {}
  [[nodiscard]] Tensor predict_noise(const Tensor& x_t, int t) const override;

 private:
  Tensor x0_;
  const NoiseSchedule& s_;
};

enum class DecodeMode { adaptive, fixed };

std::string to_string(DecodeMode mode);
DecodeMode decode_mode_from_string(const std::string& name);

struct TransmitConfig {
  ChannelConfig channel;
  PatchGrid grid{4, 4};
  int n_min = 100;
  int n_max = 200;
  DecodeMode mode = DecodeMode::adaptive;
  int fixed_steps = 150;
  AlignMode align = AlignMode::matched;
  PatchScheduleMode patch_schedule = PatchScheduleMode::strided;
  SigmaMode sigma = SigmaMode::posterior;
};

struct TransmissionReport {
  ChannelKind channel = ChannelKind::awgn;
  double snr_db = 0.0;
  DecodeMode mode = DecodeMode::adaptive;
  int t = 0;
  int t_aligned = 0;
  double norm_scale = 1.0;
  double source_power = 0.0;
  std::vector<int> steps;
  long long patch_updates = 0;
  int estimator_calls = 0;
  double encode_ms = 0.0;
  double decode_ms = 0.0;
  double psnr_db = 0.0;
  double ms_ssim = 0.0;

  /// One-line JSON record.
  [[nodiscard]] std::string to_record() const;
};

struct TransmitResult {
  Tensor reconstruction;
  /// Aligned received state mapped to an image estimate (values / sqrt(alpha_bar_t')).
  Tensor received_estimate;
  TransmissionReport report;
};

/// Scales step budgets down when the aligned timestep leaves fewer reverse
/// steps than n_max; identity when t_start >= n_max.
int scale_budget(int budget, int n_max, int t_start);

/// End-to-end: encode -> channel -> align -> (attention -> allocation) ->
/// mask schedule -> decode. `scorer` may be null in fixed mode.
TransmitResult transmit(const Tensor& x0, const NoiseSchedule& s, const NoiseEstimator& estimator,
                        const ImportanceScorer* scorer, const TransmitConfig& cfg, Rng& rng);

}  // namespace jscna
