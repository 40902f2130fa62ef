#include "jscna/channel.hpp"

#include <cmath>

#include "jscna/errors.hpp"
#include "jscna/schedule.hpp"

namespace jscna {

std::string to_string(ChannelKind kind) {
  return kind == ChannelKind::awgn ? "awgn" : "rayleigh";
}

ChannelKind channel_kind_from_string(const std::string& name) {
  if (name == "awgn") return ChannelKind::awgn;
  if (name == "rayleigh") return ChannelKind::rayleigh;
  throw ConfigError("unknown channel kind '" + name + "' (expected awgn|rayleigh)");
}

void ChannelConfig::validate() const {
  if (!std::isfinite(snr_db)) throw ConfigError("channel: snr_db must be finite");
  if (!(gain_floor >= 0.0 && gain_floor < 1.0)) {
    throw ConfigError("channel: gain_floor must lie in [0, 1), got " + std::to_string(gain_floor));
  }
}

double noise_std_for_snr(double snr_db, double signal_power) {
  if (!(signal_power > 0.0)) throw ConfigError("noise_std_for_snr: signal power must be > 0");
  return std::sqrt(signal_power / db_to_linear(snr_db));
}

ChannelRealization sample_channel(const ChannelConfig& cfg, Shape shape) {
  cfg.validate();
  if (shape.size() == 0) throw ShapeError("sample_channel: empty shape");
  ChannelRealization ch;
  ch.kind = cfg.kind;
  ch.gain_floor = cfg.gain_floor;
  ch.noise_std = noise_std_for_snr(cfg.snr_db, 1.0);
  ch.raw_gains = Tensor(shape, 1.0);
  if (cfg.kind == ChannelKind::rayleigh) {
    Rng rng(cfg.seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    // |h| of a unit-power complex Gaussian: E[h^2] = 1.
    for (double& g : ch.raw_gains.values()) {
      const double re = nd(rng);
      const double im = nd(rng);
      g = std::sqrt(0.5 * (re * re + im * im));
    }
  }
  ch.gains = ch.raw_gains;
  for (double& g : ch.gains.values()) g = std::max(g, cfg.gain_floor);
  return ch;
}

ChannelRealization identity_channel(Shape shape) {
  ChannelRealization ch;
  ch.raw_gains = Tensor(shape, 1.0);
  ch.gains = ch.raw_gains;
  return ch;
}

Tensor apply_channel(const Tensor& x, const ChannelRealization& ch, Rng& rng) {
  require_same_shape(x, ch.raw_gains, "apply_channel");
  Tensor y(x.shape());
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = ch.raw_gains[i] * x[i];
    if (ch.noise_std > 0.0) y[i] += ch.noise_std * nd(rng);
  }
  return y;
}

Tensor precompensate(const Tensor& x, const ChannelRealization& ch) {
  require_same_shape(x, ch.gains, "precompensate");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (ch.gains[i] == 0.0) {
      throw NumericalError("precompensate: zero channel gain at element " + std::to_string(i) +
                           " (set a positive gain_floor)");
    }
    out[i] = x[i] / ch.gains[i];
  }
  return out;
}

}  // namespace jscna
