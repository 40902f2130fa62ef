#pragma once

#include <cstdint>
#include <string>

#include "jscna/rng.hpp"
#include "jscna/tensor.hpp"

namespace jscna {

enum class ChannelKind { awgn, rayleigh };

std::string to_string(ChannelKind kind);
ChannelKind channel_kind_from_string(const std::string& name);

struct ChannelConfig {
  ChannelKind kind = ChannelKind::awgn;
  double snr_db = 10.0;
  /// Smallest fading magnitude the transmitter inverts; deeper fades are
  /// clipped up to this value before pre-compensation.
  double gain_floor = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One flat-fading draw: a diagonal channel with one real gain per element.
struct ChannelRealization {
  ChannelKind kind = ChannelKind::awgn;
  /// Physical gains applied by the channel.
  Tensor raw_gains;
  /// Gains known to the transmitter, clipped below at `gain_floor`.
  Tensor gains;
  double gain_floor = 0.0;
  double noise_std = 0.0;
};

/// Noise amplitude giving `snr_db` against a signal of `signal_power`.
double noise_std_for_snr(double snr_db, double signal_power = 1.0);

ChannelRealization sample_channel(const ChannelConfig& cfg, Shape shape);

/// Identity channel: unit gains, no noise.
ChannelRealization identity_channel(Shape shape);

/// raw_gains * x + n, n ~ N(0, noise_std^2) i.i.d.
Tensor apply_channel(const Tensor& x, const ChannelRealization& ch, Rng& rng);

/// x / gains (zero-forcing at the transmitter).
Tensor precompensate(const Tensor& x, const ChannelRealization& ch);

}  // namespace jscna
