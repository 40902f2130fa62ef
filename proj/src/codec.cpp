#include "jscna/codec.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <json.hpp>

#include "jscna/errors.hpp"
#include "jscna/metrics.hpp"

namespace jscna {
namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

void check_timestep(const NoiseSchedule& s, int t, const char* what) {
  if (t < 1 || t > s.T()) {
    throw RangeError(std::string(what) + ": timestep " + std::to_string(t) + " outside [1, " +
                     std::to_string(s.T()) + "]");
  }
}

// (1 - alpha_bar) / alpha_bar: noise-to-signal ratio of a diffusion state.
double noise_ratio(const NoiseSchedule& s, int t) {
  const double ab = s.alpha_bar(t);
  return (1.0 - ab) / ab;
}

// Evenly spaced real positions from `start` down to 1.
std::vector<double> even_positions(int start, int count) {
  std::vector<double> p(static_cast<std::size_t>(count));
  if (count == 1) {
    p[0] = start;
    return p;
  }
  const double stride = static_cast<double>(start - 1) / static_cast<double>(count - 1);
  for (int k = 0; k < count; ++k) p[k] = start - k * stride;
  p.back() = 1.0;
  return p;
}

void check_budget(int n, int t_start, const char* what) {
  if (n < 1) throw ConfigError(std::string(what) + ": step budget must be >= 1");
  if (n > t_start) {
    throw ConfigError(std::string(what) + ": step budget " + std::to_string(n) + " exceeds t_start " +
                      std::to_string(t_start));
  }
  if (n == 1 && t_start > 1) {
    throw ConfigError(std::string(what) + ": a single step cannot traverse t_start " +
                      std::to_string(t_start) + " -> 1; budgets must be >= 2");
  }
}

// x <- a * (x - b * eps) + sigma * z, shared by the masked and unmasked paths.
inline double reverse_update(double x, double eps, double z, const ReverseStepCoeffs& c) {
  double v = c.inv_sqrt_alpha * (x - c.noise_coeff * eps);
  if (c.sigma > 0.0) v += c.sigma * z;
  return v;
}

}  // namespace

Tensor forward_diffuse(const Tensor& x0, const Tensor& noise, int t, const NoiseSchedule& s) {
  require_same_shape(x0, noise, "forward_diffuse");
  if (t < 0 || t > s.T()) throw RangeError("forward_diffuse: timestep out of range");
  const double a = std::sqrt(s.alpha_bar(t));
  const double b = std::sqrt(1.0 - s.alpha_bar(t));
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * noise[i];
  return out;
}

LatentSignal encode(const Tensor& x0, int t, const ChannelRealization& ch, const NoiseSchedule& s, Rng& rng) {
  check_timestep(s, t, "encode");
  require_same_shape(x0, ch.gains, "encode");
  const Tensor eps = standard_normal(x0.shape(), rng);
  Tensor x = forward_diffuse(x0, eps, t, s);
  const double power = x.mean_square();
  if (!(power > 0.0)) throw NumericalError("encode: diffused signal has zero power");
  const double c = std::sqrt(power);
  x *= 1.0 / c;
  return LatentSignal{precompensate(x, ch), t, c};
}

LatentSignal align_received(const Tensor& y, int t, const ChannelRealization& ch, double norm_scale,
                            const NoiseSchedule& s, AlignMode mode) {
  check_timestep(s, t, "align_received");
  require_same_shape(y, ch.gains, "align_received");
  if (!(norm_scale > 0.0)) throw ConfigError("align_received: norm_scale must be > 0");
  Tensor scaled = y * norm_scale;
  if (mode == AlignMode::literal) return LatentSignal{std::move(scaled), t, norm_scale};

  const double ab_t = s.alpha_bar(t);
  const double variance = (1.0 - ab_t) + norm_scale * norm_scale * ch.noise_std * ch.noise_std;
  const double target = variance / ab_t;
  if (target > noise_ratio(s, s.T())) {
    throw ChannelTooNoisyError(
        "align_received: combined noise exceeds the schedule's final step (T=" + std::to_string(s.T()) +
        "); encode at a smaller t, raise the channel SNR, or extend the schedule");
  }
  // noise_ratio increases with t, so the scan can stop once it passes target.
  int best = t;
  double best_err = std::abs(noise_ratio(s, t) - target);
  for (int k = t + 1; k <= s.T(); ++k) {
    const double err = std::abs(noise_ratio(s, k) - target);
    if (err < best_err) {
      best = k;
      best_err = err;
    }
    if (noise_ratio(s, k) > target) break;
  }
  if (best != t) scaled *= std::sqrt(s.alpha_bar(best) / ab_t);
  return LatentSignal{std::move(scaled), best, norm_scale};
}

std::vector<double> importance_weights(const AttentionMap& a) {
  const int n = a.size();
  if (n < 1 || a.weights.size() != static_cast<std::size_t>(n) * n) {
    throw ShapeError("importance_weights: attention map must be square N x N");
  }
  std::vector<double> w(static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) w[i] += a.at(j, i);
  for (double& v : w) v /= n;
  return w;
}

long long StepAllocation::total_updates() const {
  long long s = 0;
  for (int n : steps) s += n;
  return s;
}

StepAllocation allocate_steps(std::span<const double> weights, int n_min, int n_max, PatchGrid grid) {
  if (weights.empty()) throw ConfigError("allocate_steps: empty weight vector");
  if (n_min > n_max || n_min < 0) throw ConfigError("allocate_steps: require 0 <= n_min <= n_max");
  if (weights.size() != static_cast<std::size_t>(grid.count())) {
    throw ShapeError("allocate_steps: weight count does not match patch grid");
  }
  StepAllocation a;
  a.weights.assign(weights.begin(), weights.end());
  a.n_min = n_min;
  a.n_max = n_max;
  a.grid = grid;
  const auto [lo_it, hi_it] = std::minmax_element(weights.begin(), weights.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  a.norm_weights.resize(weights.size());
  a.steps.resize(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double wn = hi == lo ? 0.5 : (weights[i] - lo) / (hi - lo);
    a.norm_weights[i] = wn;
    a.steps[i] = static_cast<int>(std::round(n_min + wn * (n_max - n_min)));
  }
  return a;
}

StepAllocation uniform_allocation(int steps, PatchGrid grid) {
  StepAllocation a;
  a.grid = grid;
  a.n_min = steps;
  a.n_max = steps;
  const auto n = static_cast<std::size_t>(grid.count());
  a.weights.assign(n, 1.0 / static_cast<double>(n));
  a.norm_weights.assign(n, 0.5);
  a.steps.assign(n, steps);
  return a;
}

long long MaskSchedule::total_updates() const {
  long long s = 0;
  for (const auto& m : masks)
    for (auto v : m) s += v;
  return s;
}

MaskSchedule build_mask_schedule(const StepAllocation& alloc, int t_start, PatchScheduleMode mode) {
  if (t_start < 1) throw ConfigError("build_mask_schedule: t_start must be >= 1");
  const int patches = alloc.grid.count();
  if (static_cast<int>(alloc.steps.size()) != patches) {
    throw ShapeError("build_mask_schedule: allocation does not match its grid");
  }
  int global_steps = alloc.n_max;
  for (int n : alloc.steps) global_steps = std::max(global_steps, n);
  if (global_steps == 0) {
    // Nothing to denoise: a single idle step keeps the start timestep visible.
    MaskSchedule idle;
    idle.grid = alloc.grid;
    idle.timesteps = {t_start};
    idle.masks.assign(1, std::vector<std::uint8_t>(static_cast<std::size_t>(patches), 0));
    idle.targets.assign(1, std::vector<int>(static_cast<std::size_t>(patches), -1));
    idle.per_patch_sequences.resize(static_cast<std::size_t>(patches));
    return idle;
  }
  check_budget(global_steps, t_start, "build_mask_schedule");
  for (int n : alloc.steps) {
    if (n < 0) throw ConfigError("build_mask_schedule: negative step budget");
    if (n > 0) check_budget(n, t_start, "build_mask_schedule");
  }

  MaskSchedule ms;
  ms.grid = alloc.grid;
  const std::vector<double> gpos = even_positions(t_start, global_steps);
  ms.timesteps.resize(gpos.size());
  for (std::size_t k = 0; k < gpos.size(); ++k) ms.timesteps[k] = static_cast<int>(std::round(gpos[k]));
  ms.masks.assign(gpos.size(), std::vector<std::uint8_t>(static_cast<std::size_t>(patches), 0));
  ms.targets.assign(gpos.size(), std::vector<int>(static_cast<std::size_t>(patches), -1));
  ms.per_patch_sequences.resize(static_cast<std::size_t>(patches));

  const int last = global_steps - 1;
  for (int i = 0; i < patches; ++i) {
    const int n = alloc.steps[i];
    if (n == 0) continue;
    std::vector<int> idx(static_cast<std::size_t>(n));
    if (mode == PatchScheduleMode::countdown) {
      for (int k = 0; k < n; ++k) idx[k] = k;
    } else {
      const std::vector<double> ppos = even_positions(t_start, n);
      for (int k = 0; k < n; ++k) {
        // Nearest global entry; ties go to the larger timestep (lower index).
        int best = 0;
        double best_d = std::abs(ms.timesteps[0] - ppos[k]);
        for (int g = 1; g <= last; ++g) {
          const double d = std::abs(ms.timesteps[g] - ppos[k]);
          if (d < best_d) {
            best = g;
            best_d = d;
          }
        }
        idx[k] = best;
      }
      idx.front() = 0;
      idx.back() = last;
      // Resolve duplicates by shifting to the next unused entry, then pull
      // back anything pushed past the end.
      for (int k = 1; k < n; ++k) idx[k] = std::max(idx[k], idx[k - 1] + 1);
      idx.back() = std::min(idx.back(), last);
      for (int k = n - 2; k >= 0; --k) idx[k] = std::min(idx[k], idx[k + 1] - 1);
    }
    auto& seq = ms.per_patch_sequences[i];
    for (int k = 0; k < n; ++k) {
      const int g = idx[k];
      seq.push_back(ms.timesteps[g]);
      ms.masks[g][i] = 1;
      int target = 0;
      if (k + 1 < n) {
        target = ms.timesteps[idx[k + 1]];
      } else if (mode == PatchScheduleMode::countdown && g < last) {
        target = ms.timesteps[g + 1];
      }
      ms.targets[g][i] = target;
    }
  }
  return ms;
}

namespace {

void check_grid(const Shape& s, PatchGrid grid) {
  if (grid.rows < 1 || grid.cols < 1 || s.h % grid.rows != 0 || s.w % grid.cols != 0) {
    throw ShapeError("decode: patch grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                     " does not tile image " + s.str());
  }
}

}  // namespace

Tensor decode(const LatentSignal& y, const MaskSchedule& schedule, const NoiseEstimator& estimator,
              const NoiseSchedule& s, Rng& rng, SigmaMode sigma) {
  const Shape sh = y.values.shape();
  check_grid(sh, schedule.grid);
  if (schedule.timesteps.empty() || y.t != schedule.timesteps.front()) {
    throw ConfigError("decode: latent timestep " + std::to_string(y.t) +
                      " does not match the mask schedule start");
  }
  const int ph = sh.h / schedule.grid.rows;
  const int pw = sh.w / schedule.grid.cols;
  const int patches = schedule.grid.count();

  Tensor x = y.values;
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t k = 0; k < schedule.timesteps.size(); ++k) {
    const auto& mask = schedule.masks[k];
    if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) continue;
    const int t = schedule.timesteps[k];
    const Tensor eps = estimator.predict_noise(x, t);

    std::vector<ReverseStepCoeffs> coeffs(static_cast<std::size_t>(patches));
    bool stochastic = false;
    for (int i = 0; i < patches; ++i) {
      if (!mask[i]) continue;
      coeffs[i] = jump_coeffs(s, t, schedule.targets[k][i], sigma);
      stochastic = stochastic || coeffs[i].sigma > 0.0;
    }
    Tensor z;
    if (stochastic) z = standard_normal(sh, rng);

    for (int i = 0; i < patches; ++i) {
      if (!mask[i]) continue;
      const int r0 = (i / schedule.grid.cols) * ph;
      const int c0 = (i % schedule.grid.cols) * pw;
      const ReverseStepCoeffs& c = coeffs[i];
      for (int n = 0; n < sh.n; ++n)
        for (int ch = 0; ch < sh.c; ++ch)
          for (int yy = r0; yy < r0 + ph; ++yy)
            for (int xx = c0; xx < c0 + pw; ++xx) {
              const std::size_t j = x.index(n, ch, yy, xx);
              x[j] = reverse_update(x[j], eps[j], stochastic ? z[j] : 0.0, c);
            }
    }
  }
  for (double& v : x.values()) v = std::clamp(v, -1.0, 1.0);
  return x;
}

Tensor reverse_diffusion(const Tensor& x_start, std::span<const int> timesteps,
                         const NoiseEstimator& estimator, const NoiseSchedule& s, Rng& rng, SigmaMode sigma) {
  Tensor x = x_start;
  for (std::size_t k = 0; k < timesteps.size(); ++k) {
    const int t = timesteps[k];
    const int next = k + 1 < timesteps.size() ? timesteps[k + 1] : 0;
    const ReverseStepCoeffs c = jump_coeffs(s, t, next, sigma);
    const Tensor eps = estimator.predict_noise(x, t);
    Tensor z;
    if (c.sigma > 0.0) z = standard_normal(x.shape(), rng);
    for (std::size_t j = 0; j < x.size(); ++j) {
      x[j] = reverse_update(x[j], eps[j], c.sigma > 0.0 ? z[j] : 0.0, c);
    }
  }
  for (double& v : x.values()) v = std::clamp(v, -1.0, 1.0);
  return x;
}

Tensor OracleNoiseEstimator::predict_noise(const Tensor& x_t, int t) const {
  if (x_t.shape().item_size() != x0_.shape().item_size()) {
    throw ShapeError("oracle estimator: state does not match the reference image");
  }
  const double a = std::sqrt(s_.alpha_bar(t));
  const double b = std::sqrt(1.0 - s_.alpha_bar(t));
  Tensor eps(x_t.shape());
  const std::size_t item = x0_.size();
  for (std::size_t j = 0; j < eps.size(); ++j) eps[j] = (x_t[j] - a * x0_[j % item]) / b;
  return eps;
}

std::string to_string(DecodeMode mode) { return mode == DecodeMode::adaptive ? "adaptive" : "fixed"; }

DecodeMode decode_mode_from_string(const std::string& name) {
  if (name == "adaptive") return DecodeMode::adaptive;
  if (name == "fixed") return DecodeMode::fixed;
  throw ConfigError("unknown decode mode '" + name + "' (expected adaptive|fixed)");
}

std::string TransmissionReport::to_record() const {
  nlohmann::ordered_json j;
  j["channel"] = to_string(channel);
  j["snr_db"] = snr_db;
  j["mode"] = to_string(mode);
  j["t"] = t;
  j["t_aligned"] = t_aligned;
  j["norm_scale"] = norm_scale;
  j["source_power"] = source_power;
  j["steps"] = steps;
  j["patch_updates"] = patch_updates;
  j["estimator_calls"] = estimator_calls;
  j["encode_ms"] = encode_ms;
  j["decode_ms"] = decode_ms;
  j["psnr_db"] = psnr_db;
  j["ms_ssim"] = ms_ssim;
  return j.dump();
}

int scale_budget(int budget, int n_max, int t_start) {
  const int floor_steps = std::min(2, t_start);
  if (t_start >= n_max) return std::clamp(budget, floor_steps, t_start);
  const double r = static_cast<double>(t_start) / static_cast<double>(n_max);
  const int scaled = static_cast<int>(std::round(budget * r));
  return std::clamp(scaled, floor_steps, t_start);
}

TransmitResult transmit(const Tensor& x0, const NoiseSchedule& s, const NoiseEstimator& estimator,
                        const ImportanceScorer* scorer, const TransmitConfig& cfg, Rng& rng) {
  if (cfg.n_min < 1 || cfg.n_min > cfg.n_max) throw ConfigError("transmit: require 1 <= n_min <= n_max");
  if (cfg.mode == DecodeMode::adaptive && scorer == nullptr) {
    throw ConfigError("transmit: adaptive mode needs an importance scorer");
  }
  TransmitResult result;
  TransmissionReport& rep = result.report;
  rep.channel = cfg.channel.kind;
  rep.snr_db = cfg.channel.snr_db;
  rep.mode = cfg.mode;

  const auto t0 = std::chrono::steady_clock::now();
  rep.source_power = x0.mean_square();
  const double power_db = rep.source_power > 1e-12 ? linear_to_db(rep.source_power) : 0.0;
  rep.t = timestep_for_snr(s, cfg.channel.snr_db - power_db);

  const ChannelRealization ch = sample_channel(cfg.channel, x0.shape());
  const LatentSignal tx = encode(x0, rep.t, ch, s, rng);
  rep.norm_scale = tx.norm_scale;
  rep.encode_ms = elapsed_ms(t0);

  const Tensor y = apply_channel(tx.values, ch, rng);

  const auto t1 = std::chrono::steady_clock::now();
  const LatentSignal aligned = align_received(y, rep.t, ch, tx.norm_scale, s, cfg.align);
  rep.t_aligned = aligned.t;
  result.received_estimate = aligned.values * (1.0 / std::sqrt(s.alpha_bar(aligned.t)));
  for (double& v : result.received_estimate.values()) v = std::clamp(v, -1.0, 1.0);

  const int t_start = aligned.t;
  StepAllocation alloc;
  if (cfg.mode == DecodeMode::adaptive) {
    const AttentionMap a = scorer->score(aligned.values, t_start, cfg.grid);
    const std::vector<double> w = importance_weights(a);
    alloc = allocate_steps(w, scale_budget(cfg.n_min, cfg.n_max, t_start),
                           scale_budget(cfg.n_max, cfg.n_max, t_start), cfg.grid);
  } else {
    alloc = uniform_allocation(scale_budget(cfg.fixed_steps, cfg.n_max, t_start), cfg.grid);
  }
  const MaskSchedule sched = build_mask_schedule(alloc, t_start, cfg.patch_schedule);
  result.reconstruction = decode(aligned, sched, estimator, s, rng, cfg.sigma);
  rep.decode_ms = elapsed_ms(t1);

  rep.steps = alloc.steps;
  rep.patch_updates = sched.total_updates();
  for (const auto& m : sched.masks) {
    if (std::any_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; })) ++rep.estimator_calls;
  }
  const Tensor ref = to_8bit(x0);
  const Tensor rec = to_8bit(result.reconstruction);
  rep.psnr_db = psnr(ref, rec);
  rep.ms_ssim = ms_ssim(ref, rec);
  return result;
}

}  // namespace jscna
