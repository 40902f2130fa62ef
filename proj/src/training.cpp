#include "jscna/training.hpp"

#include <chrono>
#include <cmath>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "jscna/codec.hpp"
#include "jscna/errors.hpp"

namespace jscna {

void TrainingConfig::validate() const {
  if (!(beta_tradeoff >= 0.0)) throw ConfigError("training: beta_tradeoff must be >= 0");
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (step_budget < 1) throw ConfigError("training: step_budget must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("training: learning_rate must be > 0");
  if (log_interval < 1) throw ConfigError("training: log_interval must be >= 1");
  if (augment_snr_min_db > augment_snr_max_db) throw ConfigError("training: augment SNR range inverted");
}

double denoise_loss(const Tensor& eps_true, const Tensor& eps_pred) {
  require_same_shape(eps_true, eps_pred, "denoise_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < eps_true.size(); ++i) {
    const double d = eps_true[i] - eps_pred[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps_true.size());
}

double reconstruction_loss(const Tensor& x_hat, const Tensor& x0) {
  require_same_shape(x_hat, x0, "reconstruction_loss");
  double l1 = 0.0, l2 = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = x_hat[i] - x0[i];
    l1 += std::abs(d);
    l2 += d * d;
  }
  const auto n = static_cast<double>(x0.size());
  return 0.5 * (l1 / n) + 0.5 * (l2 / n);
}

LossBreakdown total_loss(double denoise, double rec, double beta_tradeoff) {
  return LossBreakdown{denoise, rec, denoise + beta_tradeoff * rec};
}

namespace {

void x0_coefficients(std::span<const int> t, const NoiseSchedule& s, std::vector<double>& a,
                     std::vector<double>& b) {
  a.resize(t.size());
  b.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double ab = s.alpha_bar(t[i]);
    a[i] = 1.0 / std::sqrt(ab);
    b[i] = -std::sqrt(1.0 - ab) / std::sqrt(ab);
  }
}

}  // namespace

Tensor estimate_x0(const Tensor& x_t, const Tensor& eps, std::span<const int> t, const NoiseSchedule& s) {
  std::vector<double> a, b;
  x0_coefficients(t, s, a, b);
  ag::NoGradGuard guard;
  return ag::affine_per_item(x_t, ag::constant(eps), a, b).value();
}

LossGraph loss_graph(const DenoiserNetwork& net, const Tensor& x_t, std::span<const int> t,
                     const Tensor& eps, const Tensor& x0, const NoiseSchedule& s, double beta_tradeoff) {
  require_same_shape(x_t, eps, "loss_graph");
  require_same_shape(x_t, x0, "loss_graph");
  LossGraph g;
  ag::Var eps_pred = net.forward(ag::constant(x_t), t);
  g.denoise = ag::mse(eps_pred, ag::constant(eps));
  std::vector<double> a, b;
  x0_coefficients(t, s, a, b);
  ag::Var x_hat = ag::affine_per_item(x_t, eps_pred, a, b);
  g.rec = ag::hybrid_l1_l2(x_hat, ag::constant(x0));
  g.total = ag::weighted_sum(g.denoise, 1.0, g.rec, beta_tradeoff);
  return g;
}

AdamOptimizer::AdamOptimizer(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(const std::vector<NamedParameter>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.var.shape());
      v_.emplace_back(p.var.shape());
    }
  }
  if (m_.size() != params.size()) throw ConfigError("adam: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ag::Var var = params[k].var;
    const Tensor& g = var.grad();
    if (g.empty()) continue;
    Tensor& w = var.mutable_value();
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
    var.zero_grad();
  }
}

void AdamOptimizer::restore(std::uint64_t steps, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != v.size()) throw CheckpointError("adam: moment lists differ in length");
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

Tensor sample_batch(std::span<const Tensor> dataset, int batch_size, Rng& rng) {
  if (dataset.empty()) throw ConfigError("sample_batch: empty dataset");
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::vector<Tensor> items;
  items.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) items.push_back(dataset[pick(rng)]);
  return stack(items);
}

NoisedBatch make_noised_batch(const Tensor& x0, const NoiseSchedule& s, const TrainingConfig& cfg, Rng& rng) {
  NoisedBatch nb;
  nb.x0 = x0;
  const int n = x0.shape().n;
  std::uniform_int_distribution<int> pick_t(1, s.T());
  nb.t.resize(static_cast<std::size_t>(n));
  for (int& t : nb.t) t = pick_t(rng);
  nb.eps = standard_normal(x0.shape(), rng);
  nb.x_t = Tensor(x0.shape());
  for (int i = 0; i < n; ++i) {
    nb.x_t.set_item(i, forward_diffuse(x0.item(i), nb.eps.item(i), nb.t[i], s));
  }
  if (!cfg.channel_augment) return nb;

  std::uniform_real_distribution<double> pick_snr(cfg.augment_snr_min_db, cfg.augment_snr_max_db);
  for (int i = 0; i < n; ++i) {
    const Tensor xi = nb.x_t.item(i);
    const double c = std::sqrt(xi.mean_square());
    ChannelRealization ch = identity_channel(xi.shape());
    ch.noise_std = noise_std_for_snr(pick_snr(rng));
    const Tensor y = apply_channel(xi * (1.0 / c), ch, rng);
    LatentSignal aligned;
    try {
      aligned = align_received(y, nb.t[i], ch, c, s);
    } catch (const ChannelTooNoisyError&) {
      continue;  // keep the plain diffusion state
    }
    const int ta = aligned.t;
    const double a = std::sqrt(s.alpha_bar(ta));
    const double b = std::sqrt(1.0 - s.alpha_bar(ta));
    const Tensor x0i = x0.item(i);
    Tensor resid(xi.shape());
    for (std::size_t j = 0; j < resid.size(); ++j) resid[j] = (aligned.values[j] - a * x0i[j]) / b;
    nb.x_t.set_item(i, aligned.values);
    nb.eps.set_item(i, resid);
    nb.t[i] = ta;
  }
  return nb;
}

LossBreakdown train_step(DenoiserNetwork& net, AdamOptimizer& opt, const Tensor& batch,
                         const NoiseSchedule& s, const TrainingConfig& cfg, Rng& rng) {
  const NoisedBatch nb = make_noised_batch(batch, s, cfg, rng);
  const LossGraph g = loss_graph(net, nb.x_t, nb.t, nb.eps, nb.x0, s, cfg.beta_tradeoff);
  const LossBreakdown out = total_loss(g.denoise.item(), g.rec.item(), cfg.beta_tradeoff);
  if (!std::isfinite(out.total) || !std::isfinite(out.denoise) || !std::isfinite(out.rec)) {
    std::ostringstream os;
    os << "train_step: non-finite loss (denoise=" << out.denoise << ", rec=" << out.rec
       << ", total=" << out.total << ", optimizer step=" << opt.steps_taken() << ", timesteps=[";
    for (std::size_t i = 0; i < nb.t.size(); ++i) os << (i ? "," : "") << nb.t[i];
    os << "], x_t finite=" << nb.x_t.all_finite() << ")";
    throw NumericalError(os.str());
  }
  ag::backward(g.total);
  opt.step(net.parameters());
  return out;
}

std::vector<LossBreakdown> train(DenoiserNetwork& net, AdamOptimizer& opt, std::span<const Tensor> dataset,
                                 const NoiseSchedule& s, const TrainingConfig& cfg, std::uint64_t start_step,
                                 std::ostream* log) {
  cfg.validate();
  std::vector<LossBreakdown> history;
  const auto began = std::chrono::steady_clock::now();
  LossBreakdown window{};
  int window_count = 0;
  for (std::uint64_t step = start_step; step < static_cast<std::uint64_t>(cfg.step_budget); ++step) {
    Rng rng(derive_seed(cfg.seed, step));
    const Tensor batch = sample_batch(dataset, cfg.batch_size, rng);
    const LossBreakdown l = train_step(net, opt, batch, s, cfg, rng);
    history.push_back(l);
    window.denoise += l.denoise;
    window.rec += l.rec;
    ++window_count;
    if (log && ((step + 1) % static_cast<std::uint64_t>(cfg.log_interval) == 0 ||
                step + 1 == static_cast<std::uint64_t>(cfg.step_budget))) {
      nlohmann::ordered_json j;
      const LossBreakdown mean =
          total_loss(window.denoise / window_count, window.rec / window_count, cfg.beta_tradeoff);
      j["step"] = step + 1;
      j["denoise"] = mean.denoise;
      j["rec"] = mean.rec;
      j["total"] = mean.total;
      j["wall_ms"] =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - began).count();
      *log << j.dump() << '\n' << std::flush;
      window = {};
      window_count = 0;
    }
  }
  return history;
}

}  // namespace jscna
