#include "jscna/schedule.hpp"

#include <cmath>
#include <string>

#include "jscna/errors.hpp"

namespace jscna {

NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("schedule: T must be >= 1, got " + std::to_string(T));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("schedule: require 0 < beta_start <= beta_end < 1, got " +
                      std::to_string(beta_start) + ", " + std::to_string(beta_end));
  }
  NoiseSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  const auto n = static_cast<std::size_t>(T) + 1;
  s.betas_.assign(n, 0.0);
  s.alphas_.assign(n, 1.0);
  s.alpha_bars_.assign(n, 1.0);
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
    const auto i = static_cast<std::size_t>(t);
    s.betas_[i] = beta_start + frac * (beta_end - beta_start);
    s.alphas_[i] = 1.0 - s.betas_[i];
    s.alpha_bars_[i] = s.alpha_bars_[i - 1] * s.alphas_[i];
  }
  return s;
}

double snr_of_timestep(const NoiseSchedule& s, int t) {
  if (t < 0 || t > s.T()) {
    throw RangeError("snr_of_timestep: t=" + std::to_string(t) + " outside [0, " +
                     std::to_string(s.T()) + "]");
  }
  if (t == 0) return kInfiniteSnr;
  const double ab = s.alpha_bar(t);
  return ab / (1.0 - ab);
}

int timestep_for_snr(const NoiseSchedule& s, double snr_db) {
  if (!std::isfinite(snr_db)) throw RangeError("timestep_for_snr: non-finite snr_db");
  const double target = db_to_linear(snr_db);
  // SNR is strictly decreasing in t: binary search for the first t with
  // snr(t) <= target, then keep whichever of it and its predecessor is closer.
  int lo = 1;
  int hi = s.T();
  if (snr_of_timestep(s, hi) > target) return hi;
  while (lo < hi) {
    const int mid = lo + (hi - lo) / 2;
    if (snr_of_timestep(s, mid) <= target) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  if (lo > 1 && std::abs(snr_of_timestep(s, lo - 1) - target) <
                    std::abs(snr_of_timestep(s, lo) - target)) {
    return lo - 1;
  }
  return lo;
}

ReverseStepCoeffs reverse_coeffs(const NoiseSchedule& s, int t, SigmaMode mode) {
  if (t < 1 || t > s.T()) {
    throw RangeError("reverse_coeffs: t=" + std::to_string(t) + " outside [1, " +
                     std::to_string(s.T()) + "]");
  }
  ReverseStepCoeffs c;
  const double a = s.alpha(t);
  const double ab = s.alpha_bar(t);
  c.inv_sqrt_alpha = 1.0 / std::sqrt(a);
  c.noise_coeff = (1.0 - a) / std::sqrt(1.0 - ab);
  if (mode == SigmaMode::posterior && t > 1) {
    const double var = (1.0 - s.alpha_bar(t - 1)) / (1.0 - ab) * s.beta(t);
    c.sigma = std::sqrt(var);
  }
  return c;
}

ReverseStepCoeffs jump_coeffs(const NoiseSchedule& s, int t_from, int t_to, SigmaMode mode) {
  if (t_from < 1 || t_from > s.T() || t_to < 0 || t_to >= t_from) {
    throw RangeError("jump_coeffs: invalid jump " + std::to_string(t_from) + " -> " +
                     std::to_string(t_to));
  }
  if (t_to == t_from - 1) return reverse_coeffs(s, t_from, mode);
  ReverseStepCoeffs c;
  const double ab_from = s.alpha_bar(t_from);
  const double ab_to = s.alpha_bar(t_to);
  const double a = ab_from / ab_to;
  c.inv_sqrt_alpha = 1.0 / std::sqrt(a);
  c.noise_coeff = (1.0 - a) / std::sqrt(1.0 - ab_from);
  if (mode == SigmaMode::posterior && t_to > 0) {
    const double var = (1.0 - ab_to) / (1.0 - ab_from) * (1.0 - a);
    c.sigma = std::sqrt(var);
  }
  return c;
}

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
double linear_to_db(double lin) { return 10.0 * std::log10(lin); }

}  // namespace jscna
