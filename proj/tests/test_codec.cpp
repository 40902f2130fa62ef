#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "jscna/codec.hpp"
#include "jscna/errors.hpp"
#include "jscna/metrics.hpp"

using namespace jscna;

namespace {

Tensor smooth_image(int side, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double a = u(rng), b = u(rng), c = u(rng);
  Tensor x(Shape{1, 3, side, side});
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < side; ++y)
      for (int xx = 0; xx < side; ++xx)
        x.at(0, ch, y, xx) = 0.8 * std::sin(a * 3 + (ch + 1) * (b * y + c * xx) / side * 3.0);
  return x;
}

int nearest_index(const NoiseSchedule& s, double alpha_bar) {
  int best = 1;
  for (int t = 1; t <= s.T(); ++t) {
    if (std::abs(s.alpha_bar(t) - alpha_bar) < std::abs(s.alpha_bar(best) - alpha_bar)) best = t;
  }
  return best;
}

AttentionMap random_attention(PatchGrid grid, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AttentionMap a{grid, std::vector<double>(static_cast<std::size_t>(grid.count()) * grid.count())};
  const int n = grid.count();
  for (int r = 0; r < n; ++r) {
    double s = 0;
    for (int c = 0; c < n; ++c) s += (a.weights[r * n + c] = std::pow(u(rng), 3));
    for (int c = 0; c < n; ++c) a.weights[r * n + c] /= s;
  }
  return a;
}

class FixedScorer final : public ImportanceScorer {
 public:
  explicit FixedScorer(AttentionMap a) : a_(std::move(a)) {}
  AttentionMap score(const Tensor&, int, PatchGrid) const override {
    ++calls;
    return a_;
  }
  mutable int calls = 0;

 private:
  AttentionMap a_;
};

// Counts predict_noise calls and forwards to a wrapped estimator.
class CountingEstimator final : public NoiseEstimator {
 public:
  explicit CountingEstimator(const NoiseEstimator& inner) : inner_(inner) {}
  Tensor predict_noise(const Tensor& x, int t) const override {
    ++calls;
    return inner_.predict_noise(x, t);
  }
  mutable int calls = 0;

 private:
  const NoiseEstimator& inner_;
};

}  // namespace

TEST_CASE("encode normalizes to unit power") {
  const NoiseSchedule s = build_schedule(1000);
  const Tensor x0 = smooth_image(16, 1);
  const auto ch = identity_channel(x0.shape());
  Rng rng(2);
  for (int t : {1, 100, 500, 1000}) {
    const LatentSignal sig = encode(x0, t, ch, s, rng);
    CHECK(sig.values.mean_square() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(sig.t == t);
    CHECK(sig.norm_scale > 0.0);
  }
  CHECK_THROWS_AS(encode(x0, 0, ch, s, rng), RangeError);
  CHECK_THROWS_AS(encode(x0, 1001, ch, s, rng), RangeError);
  CHECK_THROWS_AS(encode(x0, 5, identity_channel(Shape{1, 3, 8, 8}), s, rng), ShapeError);
}

TEST_CASE("encode on a near-noiseless schedule returns x0 / c") {
  const NoiseSchedule s = build_schedule(10, 1e-20, 1e-20);
  const Tensor x0 = smooth_image(8, 3);
  Rng rng(4);
  const LatentSignal sig = encode(x0, 1, identity_channel(x0.shape()), s, rng);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    REQUIRE(sig.values[i] == doctest::Approx(x0[i] / sig.norm_scale).epsilon(1e-8).scale(1e-8));
  }
}

TEST_CASE("encode pre-compensates by the transmitter gains") {
  const NoiseSchedule s = build_schedule(1000);
  const Tensor x0 = smooth_image(8, 5);
  ChannelConfig cc;
  cc.kind = ChannelKind::rayleigh;
  cc.seed = 6;
  const auto ch = sample_channel(cc, x0.shape());
  Rng r1(7), r2(7);
  const LatentSignal plain = encode(x0, 50, identity_channel(x0.shape()), s, r1);
  const LatentSignal faded = encode(x0, 50, ch, s, r2);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    REQUIRE(faded.values[i] == doctest::Approx(plain.values[i] / ch.gains[i]).epsilon(1e-12));
  }
}

TEST_CASE("variance law of the forward process") {
  const NoiseSchedule s = build_schedule(1000);
  const Tensor x0 = smooth_image(32, 8);
  const double m0 = x0.mean();
  double var0 = 0;
  for (double v : x0.values()) var0 += (v - m0) * (v - m0);
  var0 /= static_cast<double>(x0.size());
  Rng rng(9);
  for (int t : {100, 500, 900}) {
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (int d = 0; d < 1000; ++d) {
      const Tensor xt = forward_diffuse(x0, standard_normal(x0.shape(), rng), t, s);
      for (double v : xt.values()) sum += v, sq += v * v, ++n;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    const double expected = s.alpha_bar(t) * var0 + (1.0 - s.alpha_bar(t));
    CHECK(var == doctest::Approx(expected).epsilon(0.02));
  }
}

TEST_CASE("align_received") {
  const NoiseSchedule s = build_schedule(1000);
  const Shape sh{1, 3, 4, 4};
  Rng rng(10);
  const Tensor y = standard_normal(sh, rng);

  SUBCASE("no channel noise keeps t and rescales by c") {
    const auto ch = identity_channel(sh);
    const LatentSignal a = align_received(y, 123, ch, 1.7, s);
    CHECK(a.t == 123);
    CHECK(a.values == y * 1.7);
  }
  SUBCASE("matched timestep equals the scan oracle") {
    const int t = nearest_index(s, 0.9);
    auto ch = identity_channel(sh);
    ch.noise_std = std::sqrt(0.1);
    const LatentSignal a = align_received(y, t, ch, 1.0, s);
    const double target = ((1.0 - s.alpha_bar(t)) + 0.1) / s.alpha_bar(t);
    int best = t;
    for (int k = t; k <= s.T(); ++k) {
      const double r = (1.0 - s.alpha_bar(k)) / s.alpha_bar(k);
      if (std::abs(r - target) < std::abs((1.0 - s.alpha_bar(best)) / s.alpha_bar(best) - target)) best = k;
    }
    CHECK(a.t == best);
    CHECK(a.t > t);
    const double k = std::sqrt(s.alpha_bar(best) / s.alpha_bar(t));
    for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(a.values[i] == doctest::Approx(k * y[i]).epsilon(1e-14));
  }
  SUBCASE("t' grows with channel noise") {
    auto ch = identity_channel(sh);
    int prev = 0;
    for (double sd = 0.0; sd <= 1.5; sd += 0.05) {
      ch.noise_std = sd;
      const int tp = align_received(y, 200, ch, 1.0, s).t;
      REQUIRE(tp >= prev);
      prev = tp;
    }
  }
  SUBCASE("too much noise is reported") {
    auto ch = identity_channel(sh);
    ch.noise_std = 1e3;
    CHECK_THROWS_AS(align_received(y, 900, ch, 1.0, s), ChannelTooNoisyError);
  }
  SUBCASE("literal mode keeps the encoder timestep") {
    auto ch = identity_channel(sh);
    ch.noise_std = 0.5;
    const LatentSignal a = align_received(y, 300, ch, 2.0, s, AlignMode::literal);
    CHECK(a.t == 300);
    CHECK(a.values == y * 2.0);
  }
}

TEST_CASE("importance weights are column means") {
  Rng rng(11);
  const PatchGrid g{4, 4};
  AttentionMap uni{g, std::vector<double>(256, 1.0 / 16)};
  for (double w : importance_weights(uni)) CHECK(w == doctest::Approx(1.0 / 16).epsilon(1e-15));
  for (int trial = 0; trial < 20; ++trial) {
    const AttentionMap a = random_attention(g, rng);
    const auto w = importance_weights(a);
    double total = 0;
    for (int i = 0; i < 16; ++i) {
      double col = 0;
      for (int j = 0; j < 16; ++j) col += a.weights[j * 16 + i];
      REQUIRE(w[i] == col / 16);
      total += w[i];
    }
    REQUIRE(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(importance_weights(AttentionMap{g, std::vector<double>(10)}), ShapeError);
}

TEST_CASE("allocate_steps") {
  const PatchGrid g{2, 2};
  const std::vector<double> w{0.1, 0.2, 0.3, 0.4};
  const StepAllocation a = allocate_steps(w, 100, 200, g);
  CHECK(a.steps == std::vector<int>{100, 133, 167, 200});
  CHECK(a.norm_weights.front() == 0.0);
  CHECK(a.norm_weights.back() == 1.0);
  CHECK(a.total_updates() == 600);

  const std::vector<double> eq(16, 1.0 / 16);
  const StepAllocation d = allocate_steps(eq, 100, 200, PatchGrid{4, 4});
  for (int n : d.steps) CHECK(n == 150);

  Rng rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> ws(16);
    for (double& v : ws) v = u(rng);
    const StepAllocation s = allocate_steps(ws, 100, 200, PatchGrid{4, 4});
    std::vector<int> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pw(16);
    for (int i = 0; i < 16; ++i) pw[i] = ws[perm[i]];
    const StepAllocation p = allocate_steps(pw, 100, 200, PatchGrid{4, 4});
    for (int i = 0; i < 16; ++i) {
      REQUIRE(p.steps[i] == s.steps[perm[i]]);
      REQUIRE(s.steps[i] >= 100);
      REQUIRE(s.steps[i] <= 200);
      for (int j = 0; j < 16; ++j) {
        if (ws[i] >= ws[j]) REQUIRE(s.steps[i] >= s.steps[j]);
      }
    }
    const auto [lo, hi] = std::minmax_element(ws.begin(), ws.end());
    REQUIRE(s.steps[lo - ws.begin()] == 100);
    REQUIRE(s.steps[hi - ws.begin()] == 200);
  }
  CHECK_THROWS_AS(allocate_steps(w, 200, 100, g), ConfigError);
  CHECK_THROWS_AS(allocate_steps(std::vector<double>{}, 1, 2, g), ConfigError);
}

TEST_CASE("mask schedule: even stride example") {
  StepAllocation a = uniform_allocation(4, PatchGrid{1, 2});
  a.steps = {4, 2};
  const MaskSchedule m = build_mask_schedule(a, 4);
  CHECK(m.timesteps == std::vector<int>{4, 3, 2, 1});
  CHECK(m.per_patch_sequences[0] == std::vector<int>{4, 3, 2, 1});
  CHECK(m.per_patch_sequences[1] == std::vector<int>{4, 1});
  CHECK(m.targets[0][1] == 1);
  CHECK(m.targets[3][1] == 0);
  CHECK(m.total_updates() == 6);
}

TEST_CASE("mask schedule invariants over random allocations") {
  Rng rng(13);
  std::uniform_int_distribution<int> tpick(2, 1000);
  for (auto mode : {PatchScheduleMode::strided, PatchScheduleMode::countdown}) {
    for (int trial = 0; trial < 60; ++trial) {
      const int t_start = tpick(rng);
      const int hi = std::min(t_start, 200);
      const int lo = std::max(2, std::min(hi, hi / 2));
      const AttentionMap att = random_attention(PatchGrid{4, 4}, rng);
      const StepAllocation a = allocate_steps(importance_weights(att), lo, hi, PatchGrid{4, 4});
      const MaskSchedule m = build_mask_schedule(a, t_start, mode);
      REQUIRE(m.timesteps.front() == t_start);
      REQUIRE(m.timesteps.back() == 1);
      for (std::size_t k = 1; k < m.timesteps.size(); ++k) REQUIRE(m.timesteps[k] < m.timesteps[k - 1]);
      long long total = 0;
      for (int i = 0; i < 16; ++i) {
        int count = 0;
        for (const auto& mask : m.masks) count += mask[i];
        REQUIRE(count == a.steps[i]);
        REQUIRE(static_cast<int>(m.per_patch_sequences[i].size()) == a.steps[i]);
        REQUIRE(m.per_patch_sequences[i].front() == t_start);
        if (mode == PatchScheduleMode::strided) REQUIRE(m.per_patch_sequences[i].back() == 1);
        total += a.steps[i];
      }
      REQUIRE(m.total_updates() == total);
    }
  }
}

TEST_CASE("mask schedule errors") {
  StepAllocation a = uniform_allocation(10, PatchGrid{2, 2});
  CHECK_THROWS_AS(build_mask_schedule(a, 5), ConfigError);
  a = uniform_allocation(1, PatchGrid{2, 2});
  CHECK_THROWS_AS(build_mask_schedule(a, 5), ConfigError);
  CHECK_NOTHROW(build_mask_schedule(a, 1));
}

TEST_CASE("decode: oracle single step from t=1 recovers x0") {
  const NoiseSchedule s = build_schedule(1000);
  const Tensor x0 = smooth_image(8, 14);
  Rng rng(15);
  const Tensor x1 = forward_diffuse(x0, standard_normal(x0.shape(), rng), 1, s);
  const OracleNoiseEstimator oracle(x0, s);
  const MaskSchedule m = build_mask_schedule(uniform_allocation(1, PatchGrid{4, 4}), 1);
  const Tensor out = decode(LatentSignal{x1, 1, 1.0}, m, oracle, s, rng, SigmaMode::zero);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    REQUIRE(out[i] == doctest::Approx(x0[i]).epsilon(1e-4).scale(1e-4));
  }
}

TEST_CASE("decode: empty allocation returns the input state") {
  const NoiseSchedule s = build_schedule(1000);
  const Tensor x = smooth_image(8, 16);
  const OracleNoiseEstimator oracle(x, s);
  CountingEstimator counter(oracle);
  const MaskSchedule m = build_mask_schedule(uniform_allocation(0, PatchGrid{2, 2}), 40);
  Rng rng(0);
  CHECK(decode(LatentSignal{x, 40, 1.0}, m, counter, s, rng) == x);
  CHECK(counter.calls == 0);
}

TEST_CASE("decode: all-ones masks equal unmasked reverse diffusion bit for bit") {
  const NoiseSchedule s = build_schedule(1000);
  const DenoiserNetwork net = build_denoiser(DenoiserConfig::tiny(), 17);
  Rng r0(18);
  const Tensor xt = standard_normal(Shape{1, 3, 16, 16}, r0);
  for (auto sigma : {SigmaMode::posterior, SigmaMode::zero}) {
    const MaskSchedule m = build_mask_schedule(uniform_allocation(12, PatchGrid{4, 4}), 60);
    Rng r1(19), r2(19);
    const Tensor masked = decode(LatentSignal{xt, 60, 1.0}, m, net, s, r1, sigma);
    const Tensor plain = reverse_diffusion(xt, m.per_patch_sequences[0], net, s, r2, sigma);
    CHECK(masked == plain);
  }
}

TEST_CASE("decode: deterministic when sigma is zero") {
  const NoiseSchedule s = build_schedule(1000);
  const DenoiserNetwork net = build_denoiser(DenoiserConfig::tiny(), 20);
  Rng r0(21);
  const Tensor xt = standard_normal(Shape{1, 3, 16, 16}, r0);
  Rng ra(22);
  const AttentionMap att = random_attention(PatchGrid{4, 4}, ra);
  const StepAllocation a = allocate_steps(importance_weights(att), 3, 8, PatchGrid{4, 4});
  const MaskSchedule m = build_mask_schedule(a, 30);
  Rng r1(1), r2(2);
  CHECK(decode(LatentSignal{xt, 30, 1.0}, m, net, s, r1, SigmaMode::zero) ==
        decode(LatentSignal{xt, 30, 1.0}, m, net, s, r2, SigmaMode::zero));
  CountingEstimator counter(net);
  Rng r3(3);
  (void)decode(LatentSignal{xt, 30, 1.0}, m, counter, s, r3);
  CHECK(counter.calls == 8);
}

TEST_CASE("decode: oracle estimator recovers x0 through strided masked schedules") {
  const NoiseSchedule s = build_schedule(1000);
  const Tensor x0 = smooth_image(16, 23);
  Rng rng(24);
  const int t = 250;
  const Tensor xt = forward_diffuse(x0, standard_normal(x0.shape(), rng), t, s);
  const OracleNoiseEstimator oracle(x0, s);
  const AttentionMap att = random_attention(PatchGrid{4, 4}, rng);
  const MaskSchedule m = build_mask_schedule(allocate_steps(importance_weights(att), 20, 60, PatchGrid{4, 4}), t);
  const Tensor out = decode(LatentSignal{xt, t, 1.0}, m, oracle, s, rng);
  CHECK(psnr(to_8bit(x0), to_8bit(out)) >= 60.0);
}

TEST_CASE("scale_budget") {
  CHECK(scale_budget(150, 200, 500) == 150);
  CHECK(scale_budget(200, 200, 100) == 100);
  CHECK(scale_budget(100, 200, 100) == 50);
  CHECK(scale_budget(100, 200, 3) == 2);
  CHECK(scale_budget(100, 200, 1) == 1);
}

TEST_CASE("transmit end to end with the oracle estimator") {
  const NoiseSchedule s = build_schedule(1000);
  const Tensor x0 = smooth_image(16, 25);
  const OracleNoiseEstimator oracle(x0, s);
  Rng ra(26);
  FixedScorer scorer(random_attention(PatchGrid{4, 4}, ra));

  TransmitConfig cfg;
  cfg.channel.snr_db = 60.0;
  Rng rng(27);
  const TransmitResult r = transmit(x0, s, oracle, &scorer, cfg, rng);
  CHECK(r.report.psnr_db >= 40.0);
  CHECK(r.report.patch_updates <= 16LL * cfg.n_max);
  CHECK(scorer.calls == 1);

  for (double snr : {0.0, 5.0, 10.0, 15.0, 20.0}) {
    for (auto kind : {ChannelKind::awgn, ChannelKind::rayleigh}) {
      cfg.channel.snr_db = snr;
      cfg.channel.kind = kind;
      const TransmitResult rr = transmit(x0, s, oracle, &scorer, cfg, rng);
      REQUIRE(rr.report.t_aligned >= rr.report.t);
      REQUIRE(rr.report.patch_updates <= 16LL * cfg.n_max);
      REQUIRE(rr.reconstruction.shape() == x0.shape());
    }
  }
  const auto j = nlohmann::json::parse(r.report.to_record());
  CHECK(j["t"].get<int>() == r.report.t);
  CHECK(j["steps"].size() == 16);
}

TEST_CASE("fixed mode never consults the scorer") {
  const NoiseSchedule s = build_schedule(1000);
  const Tensor x0 = smooth_image(16, 28);
  const OracleNoiseEstimator oracle(x0, s);
  Rng ra(29);
  FixedScorer scorer(random_attention(PatchGrid{4, 4}, ra));
  TransmitConfig cfg;
  cfg.mode = DecodeMode::fixed;
  Rng rng(30);
  const TransmitResult r = transmit(x0, s, oracle, &scorer, cfg, rng);
  CHECK(scorer.calls == 0);
  CHECK(r.report.patch_updates == 16LL * scale_budget(cfg.fixed_steps, cfg.n_max, r.report.t_aligned));
  CHECK_NOTHROW(transmit(x0, s, oracle, nullptr, cfg, rng));
  cfg.mode = DecodeMode::adaptive;
  CHECK_THROWS_AS(transmit(x0, s, oracle, nullptr, cfg, rng), ConfigError);
}

TEST_CASE("decode mode names") {
  CHECK(decode_mode_from_string("fixed") == DecodeMode::fixed);
  CHECK(to_string(DecodeMode::adaptive) == "adaptive");
  CHECK_THROWS_AS(decode_mode_from_string("both"), ConfigError);
}
