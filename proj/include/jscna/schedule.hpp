#pragma once

#include <limits>
#include <vector>

namespace jscna {

/// Linear DDPM noise schedule. Index 0 of every table is the clean-data
/// convention (beta 0, alpha 1, alpha_bar 1); steps run 1..T.
class NoiseSchedule {
 public:
  static constexpr double kDefaultBetaStart = 1e-4;
  static constexpr double kDefaultBetaEnd = 0.02;

  [[nodiscard]] int T() const { return static_cast<int>(betas_.size()) - 1; }
  [[nodiscard]] double beta(int t) const { return betas_.at(static_cast<std::size_t>(t)); }
  [[nodiscard]] double alpha(int t) const { return alphas_.at(static_cast<std::size_t>(t)); }
  [[nodiscard]] double alpha_bar(int t) const { return alpha_bars_.at(static_cast<std::size_t>(t)); }
  [[nodiscard]] const std::vector<double>& betas() const { return betas_; }
  [[nodiscard]] const std::vector<double>& alphas() const { return alphas_; }
  [[nodiscard]] const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  [[nodiscard]] double beta_start() const { return beta_start_; }
  [[nodiscard]] double beta_end() const { return beta_end_; }

 private:
  friend NoiseSchedule build_schedule(int, double, double);
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
};

/// Coefficients of one reverse step x_{t-1} = inv_sqrt_alpha * (x_t - noise_coeff * eps) + sigma * z.
struct ReverseStepCoeffs {
  double inv_sqrt_alpha = 0.0;
  double noise_coeff = 0.0;
  double sigma = 0.0;
};

/// Reverse-step variance policy.
enum class SigmaMode {
  posterior,  ///< sigma^2 = posterior variance, zero on the final step
  zero,       ///< deterministic updates
};

NoiseSchedule build_schedule(int T, double beta_start = NoiseSchedule::kDefaultBetaStart,
                             double beta_end = NoiseSchedule::kDefaultBetaEnd);

inline constexpr double kInfiniteSnr = std::numeric_limits<double>::infinity();

/// alpha_bar / (1 - alpha_bar) for a unit-power source; kInfiniteSnr at t = 0.
double snr_of_timestep(const NoiseSchedule& s, int t);

/// Timestep whose SNR is nearest the target (compared on the linear scale)
/// among the first t with SNR <= target and its predecessor; clamped to [1, T].
int timestep_for_snr(const NoiseSchedule& s, double snr_db);

ReverseStepCoeffs reverse_coeffs(const NoiseSchedule& s, int t, SigmaMode mode = SigmaMode::posterior);

/// Coefficients for a strided jump t_from -> t_to (t_from > t_to >= 0),
/// substituting alpha_bar(t_from) / alpha_bar(t_to) for alpha_t. With
/// t_to = t_from - 1 this reproduces `reverse_coeffs(t_from)`.
ReverseStepCoeffs jump_coeffs(const NoiseSchedule& s, int t_from, int t_to,
                              SigmaMode mode = SigmaMode::posterior);

double db_to_linear(double db);
double linear_to_db(double lin);

}  // namespace jscna
