#include "jscna/profile.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <json.hpp>

#include "jscna/errors.hpp"

namespace jscna {
namespace {

ProfileEntry measure(const ExperimentConfig& cfg, const DenoiserNetwork& net, std::span<const Tensor> images,
                     const ProfileOptions& opts, DecodeMode mode, int fixed_steps) {
  const NoiseSchedule s = cfg.schedule();
  const DenoiserAttentionScorer scorer(net, cfg.attention_level);
  TransmitConfig tcfg = cfg.transmit_config(opts.channel, opts.snr_db, mode);
  tcfg.fixed_steps = fixed_steps;

  ProfileEntry e;
  e.mode = mode;
  e.fixed_steps = mode == DecodeMode::fixed ? fixed_steps : 0;
  e.label = mode == DecodeMode::adaptive ? "adaptive" : "fixed@" + std::to_string(fixed_steps);

  const auto run = [&](std::size_t i) {
    tcfg.channel.seed = derive_seed(cfg.seed, 2 * i);
    Rng rng(derive_seed(cfg.seed, 2 * i + 1));
    return transmit(images[i % images.size()], s, net, &scorer, tcfg, rng);
  };

  for (std::size_t i = 0; i < images.size(); ++i) {
    const TransmitResult r = run(i);
    e.patch_updates += static_cast<double>(r.report.patch_updates);
    e.estimator_calls += r.report.estimator_calls;
    e.psnr_db += r.report.psnr_db;
    e.ms_ssim += r.report.ms_ssim;
  }
  const auto n = static_cast<double>(images.size());
  e.patch_updates /= n;
  e.estimator_calls /= n;
  e.psnr_db /= n;
  e.ms_ssim /= n;

  for (int k = 0; k < opts.warmups; ++k) (void)run(static_cast<std::size_t>(k));
  std::vector<double> ms;
  for (int k = 0; k < opts.repeats; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)run(static_cast<std::size_t>(k));
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  const std::size_t m = ms.size();
  e.median_ms = m % 2 ? ms[m / 2] : 0.5 * (ms[m / 2 - 1] + ms[m / 2]);
  return e;
}

}  // namespace

ProfileReport profile(const ExperimentConfig& cfg, const DenoiserNetwork& net, std::span<const Tensor> images,
                      const ProfileOptions& opts) {
  cfg.validate();
  if (images.empty()) throw ConfigError("profile: no images");
  if (opts.repeats < 1 || opts.warmups < 0) throw ConfigError("profile: repeats >= 1 and warmups >= 0 required");
  ProfileReport rep;
  rep.parameters = net.parameter_count();
  rep.macs_per_eval = net.mac_estimate(cfg.image_size, cfg.image_size);
  rep.image_size = cfg.image_size;
  rep.snr_db = opts.snr_db;
  rep.channel = opts.channel;
  rep.warmups = opts.warmups;
  rep.repeats = opts.repeats;
  rep.entries.push_back(measure(cfg, net, images, opts, DecodeMode::adaptive, cfg.fixed_steps));
  rep.entries.push_back(measure(cfg, net, images, opts, DecodeMode::fixed, cfg.n_max));
  if (cfg.fixed_steps != cfg.n_max) {
    rep.entries.push_back(measure(cfg, net, images, opts, DecodeMode::fixed, cfg.fixed_steps));
  }
  return rep;
}

std::string ProfileReport::to_text() const {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "parameters        %zu (%.2f M)\n", parameters, parameters / 1e6);
  out += buf;
  std::snprintf(buf, sizeof(buf), "MACs per eval     %llu (%.3f G) at %dx%d\n",
                static_cast<unsigned long long>(macs_per_eval), macs_per_eval / 1e9, image_size, image_size);
  out += buf;
  std::snprintf(buf, sizeof(buf), "timing            median of %d runs after %d warm-ups, %s %g dB\n", repeats,
                warmups, to_string(channel).c_str(), snr_db);
  out += buf;
  out += "mode          ms/image   patch-updates  net-evals   PSNR(dB)  MS-SSIM\n";
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%-12s %9.2f  %14.1f  %9.1f  %9.3f  %7.4f\n", e.label.c_str(), e.median_ms,
                  e.patch_updates, e.estimator_calls, e.psnr_db, e.ms_ssim);
    out += buf;
  }
  if (entries.size() >= 2 && entries[1].median_ms > 0.0) {
    std::snprintf(buf, sizeof(buf), "adaptive / %s time ratio %.3f, update ratio %.3f\n", entries[1].label.c_str(),
                  entries[0].median_ms / entries[1].median_ms, entries[0].patch_updates / entries[1].patch_updates);
    out += buf;
  }
  return out;
}

std::string ProfileReport::to_json() const {
  nlohmann::ordered_json j;
  j["parameters"] = parameters;
  j["macs_per_eval"] = macs_per_eval;
  j["image_size"] = image_size;
  j["channel"] = to_string(channel);
  j["snr_db"] = snr_db;
  j["warmups"] = warmups;
  j["repeats"] = repeats;
  for (const auto& e : entries) {
    nlohmann::ordered_json r;
    r["label"] = e.label;
    r["mode"] = to_string(e.mode);
    r["fixed_steps"] = e.fixed_steps;
    r["median_ms"] = e.median_ms;
    r["patch_updates"] = e.patch_updates;
    r["estimator_calls"] = e.estimator_calls;
    r["psnr_db"] = e.psnr_db;
    r["ms_ssim"] = e.ms_ssim;
    j["entries"].push_back(r);
  }
  return j.dump(2);
}

}  // namespace jscna
