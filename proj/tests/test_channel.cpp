#include <doctest.h>

#include <cmath>
#include <memory>

#include "jscna/channel.hpp"
#include "jscna/errors.hpp"

using namespace jscna;

TEST_CASE("noise_std_for_snr") {
  CHECK(noise_std_for_snr(0.0, 1.0) == doctest::Approx(1.0));
  CHECK(noise_std_for_snr(10.0, 1.0) == doctest::Approx(std::pow(10.0, -0.5)).epsilon(1e-14));
  CHECK(noise_std_for_snr(200.0) < 1e-9);
  CHECK(noise_std_for_snr(10.0, 4.0) == doctest::Approx(2.0 * std::pow(10.0, -0.5)));
  CHECK_THROWS_AS(noise_std_for_snr(10.0, 0.0), ConfigError);
}

TEST_CASE("awgn gains are exactly one") {
  ChannelConfig cfg;
  cfg.kind = ChannelKind::awgn;
  for (double snr : {0.0, 5.0, 10.0, 15.0, 20.0}) {
    cfg.snr_db = snr;
    const auto ch = sample_channel(cfg, Shape{1, 3, 8, 8});
    for (double g : ch.gains.values()) REQUIRE(g == 1.0);
    CHECK(ch.noise_std == doctest::Approx(std::sqrt(1.0 / std::pow(10.0, snr / 10.0))));
  }
}

TEST_CASE("rayleigh second moment and clipping") {
  ChannelConfig cfg;
  cfg.kind = ChannelKind::rayleigh;
  cfg.seed = 11;
  const auto ch = sample_channel(cfg, Shape{1, 1, 1000, 1000});
  double ms = 0.0;
  for (double g : ch.raw_gains.values()) ms += g * g;
  ms /= 1e6;
  CHECK(ms >= 0.98);
  CHECK(ms <= 1.02);
  for (std::size_t i = 0; i < ch.gains.size(); ++i) {
    REQUIRE(ch.gains[i] >= cfg.gain_floor);
    REQUIRE(ch.gains[i] == std::max(ch.raw_gains[i], cfg.gain_floor));
  }
}

TEST_CASE("identity channel leaves the input untouched") {
  const Shape sh{1, 3, 4, 4};
  Rng rng(0);
  const Tensor x = standard_normal(sh, rng);
  const auto ch = identity_channel(sh);
  CHECK(apply_channel(x, ch, rng) == x);
  CHECK(precompensate(x, ch) == x);
}

TEST_CASE("received noise power matches the configured SNR") {
  ChannelConfig cfg;
  cfg.snr_db = 10.0;
  const Shape sh{1, 1, 1000, 1000};
  const auto ch = sample_channel(cfg, sh);
  Rng rng(5);
  const Tensor x = standard_normal(sh, rng);
  const Tensor y = apply_channel(x, ch, rng);
  const double p = (y - x).mean_square();
  CHECK(p == doctest::Approx(0.1).epsilon(0.02));
}

TEST_CASE("pre-compensation inverts fading where the gain is above the floor") {
  ChannelConfig cfg;
  cfg.kind = ChannelKind::rayleigh;
  cfg.seed = 2;
  const Shape sh{1, 3, 64, 64};
  auto ch = sample_channel(cfg, sh);
  ch.noise_std = 0.0;
  Rng rng(9);
  const Tensor x = standard_normal(sh, rng);
  const Tensor y = apply_channel(precompensate(x, ch), ch, rng);
  int clipped = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (ch.raw_gains[i] > cfg.gain_floor) {
      REQUIRE(std::abs(y[i] - x[i]) <= 1e-5 * std::abs(x[i]) + 1e-300);
    } else {
      ++clipped;
      const double ratio = y[i] / x[i];
      REQUIRE(ratio == doctest::Approx(ch.raw_gains[i] / cfg.gain_floor));
      REQUIRE(ratio < 1.0);
    }
  }
  CHECK(clipped > 0);
}

TEST_CASE("a gain below the floor is divided by the floor") {
  ChannelRealization ch = identity_channel(Shape{1, 1, 1, 2});
  ch.raw_gains[0] = 0.05;
  ch.gains[0] = std::max(0.05, 0.1);
  const Tensor x(Shape{1, 1, 1, 2}, 1.0);
  const Tensor tx = precompensate(x, ch);
  CHECK(tx[0] == doctest::Approx(10.0));
  CHECK(tx[0] * tx[0] <= 100.0 + 1e-9);
}

TEST_CASE("transmit power bounded by 1/floor^2") {
  ChannelConfig cfg;
  cfg.kind = ChannelKind::rayleigh;
  Rng rng(1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    const auto ch = sample_channel(cfg, Shape{1, 3, 32, 32});
    Tensor x = standard_normal(ch.gains.shape(), rng);
    x *= 1.0 / std::sqrt(x.mean_square());
    const double p = precompensate(x, ch).mean_square();
    REQUIRE(p <= 1.0 / (cfg.gain_floor * cfg.gain_floor));
  }
}

TEST_CASE("zero gain is a numerical error") {
  ChannelRealization ch = identity_channel(Shape{1, 1, 1, 1});
  ch.gains[0] = 0.0;
  CHECK_THROWS_AS(precompensate(Tensor(Shape{1, 1, 1, 1}, 1.0), ch), NumericalError);
}

TEST_CASE("same seed same realization, different seed differs") {
  ChannelConfig cfg;
  cfg.kind = ChannelKind::rayleigh;
  cfg.seed = 42;
  const Shape sh{1, 3, 8, 8};
  CHECK(sample_channel(cfg, sh).gains == sample_channel(cfg, sh).gains);
  ChannelConfig other = cfg;
  other.seed = 43;
  CHECK_FALSE(sample_channel(cfg, sh).gains == sample_channel(other, sh).gains);
}

TEST_CASE("config validation and names") {
  ChannelConfig cfg;
  cfg.gain_floor = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.gain_floor = 0.1;
  cfg.snr_db = INFINITY;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(channel_kind_from_string("rayleigh") == ChannelKind::rayleigh);
  CHECK(to_string(ChannelKind::awgn) == "awgn");
  CHECK_THROWS_AS(channel_kind_from_string("rician"), ConfigError);
  CHECK_THROWS_AS(apply_channel(Tensor(Shape{1, 1, 2, 2}), identity_channel(Shape{1, 1, 3, 3}),
                                *std::make_unique<Rng>(0)),
                  ShapeError);
}
