#include "jscna/sweep.hpp"

#include <algorithm>

#include "jscna/errors.hpp"

namespace jscna {

int SweepResult::failures() const {
  return static_cast<int>(std::count_if(rows.begin(), rows.end(), [](const SweepRow& r) { return !r.ok; }));
}

SweepResult run_sweep(const ExperimentConfig& cfg, const DenoiserNetwork& net, std::span<const Dataset> datasets,
                      const ImportanceScorer* scorer) {
  cfg.validate();
  if (datasets.empty()) throw ConfigError("run_sweep: no evaluation datasets");
  const NoiseSchedule s = cfg.schedule();
  const DenoiserAttentionScorer own(net, cfg.attention_level);
  if (scorer == nullptr) scorer = &own;

  SweepResult result;
  std::uint64_t cell = 0;
  for (const Dataset& ds : datasets) {
    for (const ChannelKind kind : cfg.channel_kinds) {
      for (const double snr : cfg.snrs_db) {
        const std::uint64_t cell_seed = derive_seed(cfg.seed, cell++);
        for (const DecodeMode mode : cfg.modes) {
          SweepRow row;
          row.dataset = ds.name;
          row.channel = kind;
          row.snr_db = snr;
          row.mode = mode;
          try {
            TransmitConfig tcfg = cfg.transmit_config(kind, snr, mode);
            double psnr_sum = 0.0, ssim_sum = 0.0, updates = 0.0, ms = 0.0;
            for (std::size_t i = 0; i < ds.images.size(); ++i) {
              const std::uint64_t item_seed = derive_seed(cell_seed, i);
              tcfg.channel.seed = derive_seed(item_seed, 0);
              Rng rng(derive_seed(item_seed, 1));
              const TransmitResult r = transmit(ds.images[i], s, net, scorer, tcfg, rng);
              psnr_sum += r.report.psnr_db;
              ssim_sum += r.report.ms_ssim;
              updates += static_cast<double>(r.report.patch_updates);
              ms += r.report.encode_ms + r.report.decode_ms;
            }
            const auto n = static_cast<double>(ds.images.size());
            row.psnr_db = psnr_sum / n;
            row.ms_ssim = ssim_sum / n;
            row.patch_updates = updates / n;
            row.ms_per_image = ms / n;
          } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
          }
          result.rows.push_back(std::move(row));
        }
      }
    }
  }
  return result;
}

SweepResult run_sweep(const ExperimentConfig& cfg, const std::string& checkpoint) {
  if (cfg.eval_dirs.empty()) throw ConfigError("run_sweep: data.eval_dirs is empty");
  DenoiserNetwork net = build_denoiser(cfg.denoiser, cfg.seed);
  load_checkpoint(checkpoint, net);
  std::vector<Dataset> sets;
  for (const auto& dir : cfg.eval_dirs) sets.push_back(ingest_dataset(dir, cfg.image_size, cfg.eval_limit));
  return run_sweep(cfg, net, sets);
}

}  // namespace jscna
