#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "jscna/autograd.hpp"
#include "jscna/tensor.hpp"

namespace jscna {

/// UNet layout. Level l runs at resolution image / 2^l with
/// base_channels * channel_multipliers[l] channels.
struct DenoiserConfig {
  int levels = 4;
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2, 2, 4};
  std::vector<int> attention_levels{2, 3};
  int time_embed_dim = 128;
  int image_channels = 3;
  int attention_heads = 4;
  int norm_groups = 8;
  /// Largest timestep the network is conditioned on (schedule T).
  int max_timestep = 1000;

  /// Six down and six up blocks, 64 -> 512 channels, attention at the two
  /// deepest levels.
  static DenoiserConfig paper();
  /// Test default: 4 levels, 32 base channels, multipliers 1,2,2,4.
  static DenoiserConfig desk();
  /// Smallest preset; fits CPU training in minutes at 32x32.
  static DenoiserConfig tiny();

  void validate() const;
  /// Throws ConfigError unless h and w are divisible by 2^(levels-1).
  void validate_image(int h, int w) const;
  [[nodiscard]] int channels_at(int level) const;
  [[nodiscard]] bool has_attention(int level) const;
  [[nodiscard]] int deepest_attention_level() const;
  /// Canonical single-line text form; used for checkpoint echo and hashing.
  [[nodiscard]] std::string serialize() const;
  static DenoiserConfig deserialize(const std::string& text);

  bool operator==(const DenoiserConfig&) const = default;
};

/// Anything that maps a noisy state at timestep t to a noise estimate of the
/// same shape.
class NoiseEstimator {
 public:
  virtual ~NoiseEstimator() = default;
  [[nodiscard]] virtual Tensor predict_noise(const Tensor& x_t, int t) const = 0;
};

/// Rows and columns of the non-overlapping patch partition.
struct PatchGrid {
  int rows = 4;
  int cols = 4;
  [[nodiscard]] int count() const { return rows * cols; }
  bool operator==(const PatchGrid&) const = default;
};

/// Row-stochastic N x N patch attention, row = attending (query) patch.
struct AttentionMap {
  PatchGrid grid;
  std::vector<double> weights;

  [[nodiscard]] int size() const { return grid.count(); }
  [[nodiscard]] double at(int row, int col) const {
    return weights[static_cast<std::size_t>(row) * size() + col];
  }
};

/// Head-averaged attention captured from one down-path attention block.
struct AttentionCapture {
  int level = -1;  ///< -1 selects the deepest attention level
  Tensor probs;    ///< (n, 1, tokens, tokens)
  int token_rows = 0;
  int token_cols = 0;
  bool captured = false;
};

struct NamedParameter {
  std::string name;
  ag::Var var;
};

class DenoiserNetwork final : public NoiseEstimator {
 public:
  DenoiserNetwork(DenoiserConfig cfg, std::uint64_t seed);
  DenoiserNetwork(const DenoiserNetwork&) = delete;
  DenoiserNetwork& operator=(const DenoiserNetwork&) = delete;
  DenoiserNetwork(DenoiserNetwork&&) noexcept;
  DenoiserNetwork& operator=(DenoiserNetwork&&) noexcept;
  ~DenoiserNetwork() override;

  /// Differentiable forward pass; one timestep per batch item.
  ag::Var forward(const ag::Var& x, std::span<const int> t, AttentionCapture* capture = nullptr) const;

  [[nodiscard]] Tensor predict_noise(const Tensor& x_t, int t) const override;
  [[nodiscard]] Tensor predict_noise(const Tensor& x_t, std::span<const int> t) const;

  [[nodiscard]] const DenoiserConfig& config() const { return cfg_; }
  [[nodiscard]] const std::vector<NamedParameter>& parameters() const { return params_; }
  [[nodiscard]] std::size_t parameter_count() const;
  /// Multiply-accumulates of one forward pass on a single h x w image.
  [[nodiscard]] std::uint64_t mac_estimate(int h, int w) const;
  [[nodiscard]] int widest_channels() const;

 private:
  struct Impl;
  DenoiserConfig cfg_;
  std::vector<NamedParameter> params_;
  std::unique_ptr<Impl> impl_;
};

DenoiserNetwork build_denoiser(const DenoiserConfig& cfg, std::uint64_t seed);

/// Sinusoidal timestep features, (n, dim, 1, 1).
Tensor timestep_embedding(std::span<const int> t, int dim);

/// Pools token-level attention onto a coarser patch grid: rows (queries) are
/// averaged within a patch, columns (keys) are summed, so rows stay stochastic.
AttentionMap pool_attention(std::span<const double> token_probs, int token_rows, int token_cols,
                            PatchGrid grid);

/// Head-averaged attention of the selected level's down-path block on a
/// single image (1, c, h, w) at timestep t. `level` -1 picks the deepest.
AttentionMap extract_attention(const DenoiserNetwork& net, const Tensor& image, int t, PatchGrid grid,
                               int level = -1);

/// Pluggable source of patch attention (the receiver's importance oracle).
class ImportanceScorer {
 public:
  virtual ~ImportanceScorer() = default;
  [[nodiscard]] virtual AttentionMap score(const Tensor& image, int t, PatchGrid grid) const = 0;
};

/// Default scorer: the denoiser's own self-attention on the received state.
class DenoiserAttentionScorer final : public ImportanceScorer {
 public:
  explicit DenoiserAttentionScorer(const DenoiserNetwork& net, int level = -1)
      : net_(net), level_(level) {}
  [[nodiscard]] AttentionMap score(const Tensor& image, int t, PatchGrid grid) const override;

 private:
  const DenoiserNetwork& net_;
  int level_;
};

}  // namespace jscna
