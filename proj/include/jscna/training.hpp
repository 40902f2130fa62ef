#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "jscna/autograd.hpp"
#include "jscna/channel.hpp"
#include "jscna/denoiser.hpp"
#include "jscna/rng.hpp"
#include "jscna/schedule.hpp"

namespace jscna {

struct TrainingConfig {
  /// Weight of the reconstruction term in the total loss.
  double beta_tradeoff = 0.5;
  int batch_size = 64;
  int step_budget = 50000;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  /// Train on channel-noise-augmented, timestep-aligned states.
  bool channel_augment = false;
  double augment_snr_min_db = 0.0;
  double augment_snr_max_db = 20.0;
  int log_interval = 100;

  void validate() const;
};

struct LossBreakdown {
  double denoise = 0.0;
  double rec = 0.0;
  double total = 0.0;
};

/// Mean squared error between true and predicted noise.
double denoise_loss(const Tensor& eps_true, const Tensor& eps_pred);
/// 0.5 * mean |x_hat - x0| + 0.5 * mean (x_hat - x0)^2.
double reconstruction_loss(const Tensor& x_hat, const Tensor& x0);
LossBreakdown total_loss(double denoise, double rec, double beta_tradeoff);

/// One-step clean estimate (x_t - sqrt(1 - alpha_bar) eps) / sqrt(alpha_bar).
Tensor estimate_x0(const Tensor& x_t, const Tensor& eps, std::span<const int> t, const NoiseSchedule& s);

struct LossGraph {
  ag::Var denoise;
  ag::Var rec;
  ag::Var total;
};

/// Differentiable total loss for a noised batch (one timestep per item).
LossGraph loss_graph(const DenoiserNetwork& net, const Tensor& x_t, std::span<const int> t,
                     const Tensor& eps, const Tensor& x0, const NoiseSchedule& s, double beta_tradeoff);

/// Adaptive-moment optimizer over a fixed parameter list.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double learning_rate = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8);

  /// Applies one update from the accumulated gradients, then clears them.
  void step(const std::vector<NamedParameter>& params);

  [[nodiscard]] double learning_rate() const { return lr_; }
  [[nodiscard]] std::uint64_t steps_taken() const { return t_; }
  [[nodiscard]] const std::vector<Tensor>& first_moments() const { return m_; }
  [[nodiscard]] const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(std::uint64_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Noised training inputs for one batch.
struct NoisedBatch {
  Tensor x0;
  Tensor x_t;
  Tensor eps;
  std::vector<int> t;
};

/// Draws t ~ U{1..T} and eps per item and forms x_t. With channel
/// augmentation the state additionally passes a random-SNR AWGN channel and
/// timestep alignment; eps and t then describe the aligned state.
NoisedBatch make_noised_batch(const Tensor& x0, const NoiseSchedule& s, const TrainingConfig& cfg, Rng& rng);

/// One optimization step on `batch` (images in [-1, 1]). Throws
/// NumericalError with diagnostics when the loss is not finite.
LossBreakdown train_step(DenoiserNetwork& net, AdamOptimizer& opt, const Tensor& batch,
                         const NoiseSchedule& s, const TrainingConfig& cfg, Rng& rng);

/// Runs steps [start_step, cfg.step_budget) over `dataset`. Step k draws its
/// batch and noise from derive_seed(cfg.seed, k), so interrupted and resumed
/// runs see identical inputs. Writes one JSON record per log interval.
std::vector<LossBreakdown> train(DenoiserNetwork& net, AdamOptimizer& opt, std::span<const Tensor> dataset,
                                 const NoiseSchedule& s, const TrainingConfig& cfg, std::uint64_t start_step,
                                 std::ostream* log = nullptr);

/// Batch for step `step` of a run: indices drawn with replacement.
Tensor sample_batch(std::span<const Tensor> dataset, int batch_size, Rng& rng);

// Checkpoints -----------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::uint32_t version = kCheckpointVersion;
  std::string denoiser_config;
  std::uint64_t step = 0;
};

void save_checkpoint(const std::string& path, const DenoiserNetwork& net, const AdamOptimizer* opt,
                     std::uint64_t step);

/// Restores parameters (and optimizer state when `opt` is given) into `net`.
/// Refuses files whose version or denoiser config differs from `net`'s.
CheckpointInfo load_checkpoint(const std::string& path, DenoiserNetwork& net, AdamOptimizer* opt = nullptr);

/// Reads only the header (version, config echo, step).
CheckpointInfo read_checkpoint_info(const std::string& path);

}  // namespace jscna
