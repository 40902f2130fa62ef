// Command-line front end: train, transmit, sweep, profile, gen-data.
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "jscna/config.hpp"
#include "jscna/dataset.hpp"
#include "jscna/errors.hpp"
#include "jscna/profile.hpp"
#include "jscna/report.hpp"
#include "jscna/sweep.hpp"

namespace fs = std::filesystem;
using namespace jscna;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::string mode;
  int fixed_steps = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "Config file (key = value lines)");
  app->add_option("--set", c.overrides, "Override a config key, e.g. --set alloc.n_max=100");
  app->add_option("--out", c.out, "Output directory (overrides output_dir)");
  app->add_option("--mode", c.mode, "Decode mode")->check(CLI::IsMember({"adaptive", "fixed"}));
  app->add_option("--fixed-steps", c.fixed_steps, "Step count for fixed mode")->check(CLI::PositiveNumber);
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](const std::uint64_t& s) { c.seed = s, c.seed_set = true; }, "Run seed");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? parse_config("") : load_config(c.config_path);
  std::vector<std::string> ov = c.overrides;
  if (!c.out.empty()) ov.push_back("output_dir=" + c.out);
  if (!c.mode.empty()) ov.push_back("decode.modes=" + c.mode);
  if (c.fixed_steps > 0) ov.push_back("decode.fixed_steps=" + std::to_string(c.fixed_steps));
  if (c.seed_set) ov.push_back("seed=" + std::to_string(c.seed));
  apply_overrides(cfg, ov);
  return cfg;
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.output_dir);
  return (fs::path(cfg.output_dir) / name).string();
}

DenoiserNetwork load_network(const ExperimentConfig& cfg, const std::string& checkpoint) {
  DenoiserNetwork net = build_denoiser(cfg.denoiser, cfg.seed);
  const CheckpointInfo info = load_checkpoint(checkpoint, net);
  std::cerr << "loaded " << checkpoint << " (step " << info.step << ")\n";
  return net;
}

int cmd_train(const Common& c, const std::string& resume) {
  const ExperimentConfig cfg = resolve(c);
  if (cfg.train_dir.empty()) throw ConfigError("train: data.train_dir is not set");
  const Dataset ds = ingest_dataset(cfg.train_dir, cfg.image_size, cfg.train_limit);
  std::cerr << "training on " << ds.images.size() << " images from " << cfg.train_dir << "\n";
  const NoiseSchedule s = cfg.schedule();
  DenoiserNetwork net = build_denoiser(cfg.denoiser, cfg.seed);
  AdamOptimizer opt(cfg.training.learning_rate);
  std::uint64_t step = 0;
  if (!resume.empty()) {
    step = load_checkpoint(resume, net, &opt).step;
    std::cerr << "resuming from step " << step << "\n";
  }
  const std::string ckpt = out_path(cfg, "checkpoint.bin");
  std::ofstream log(out_path(cfg, "train_log.jsonl"), step > 0 ? std::ios::app : std::ios::trunc);
  const auto total = static_cast<std::uint64_t>(cfg.training.step_budget);
  while (step < total) {
    TrainingConfig chunk = cfg.training;
    const std::uint64_t end = std::min<std::uint64_t>(total, step + cfg.checkpoint_interval);
    chunk.step_budget = static_cast<int>(end);
    train(net, opt, ds.images, s, chunk, step, &log);
    step = end;
    save_checkpoint(ckpt, net, &opt, step);
    std::cerr << "step " << step << "/" << total << " saved " << ckpt << "\n";
  }
  std::ofstream(out_path(cfg, "config.txt")) << cfg.serialize();
  return 0;
}

int cmd_transmit(const Common& c, const std::string& checkpoint, const std::string& image, const std::string& channel,
                 double snr) {
  const ExperimentConfig cfg = resolve(c);
  const DenoiserNetwork net = load_network(cfg, checkpoint);
  const Tensor x0 = read_image(image, cfg.image_size);
  const NoiseSchedule s = cfg.schedule();
  const DenoiserAttentionScorer scorer(net, cfg.attention_level);
  TransmitConfig tcfg = cfg.transmit_config(channel_kind_from_string(channel), snr, cfg.modes.front());
  tcfg.channel.seed = derive_seed(cfg.seed, 0);
  Rng rng(derive_seed(cfg.seed, 1));
  const TransmitResult r = transmit(x0, s, net, &scorer, tcfg, rng);
  const std::string path = out_path(cfg, "triptych.png");
  write_image(path, hconcat_images({x0, r.received_estimate, r.reconstruction}));
  std::cout << r.report.to_record() << "\n";
  std::cerr << "wrote " << path << " (input | received | reconstruction)\n";
  return 0;
}

int cmd_sweep(const Common& c, const std::string& checkpoint) {
  const ExperimentConfig cfg = resolve(c);
  const SweepResult result = run_sweep(cfg, checkpoint);
  for (const auto& p : emit_report(result, cfg, cfg.output_dir, checkpoint)) std::cerr << "wrote " << p << "\n";
  std::cout << results_csv(result, cfg.record_timing);
  if (result.failures() > 0) {
    std::cerr << result.failures() << " of " << result.rows.size() << " cells failed\n";
    return 2;
  }
  return 0;
}

int cmd_profile(const Common& c, const std::string& checkpoint, double snr, int repeats, int warmups, int images) {
  const ExperimentConfig cfg = resolve(c);
  const DenoiserNetwork net = load_network(cfg, checkpoint);
  std::vector<Tensor> set;
  if (!cfg.eval_dirs.empty()) {
    set = ingest_dataset(cfg.eval_dirs.front(), cfg.image_size, images).images;
  } else {
    for (int i = 0; i < images; ++i) set.push_back(synthetic_image(cfg.image_size, cfg.seed, i));
  }
  ProfileOptions opts;
  opts.snr_db = snr;
  opts.repeats = repeats;
  opts.warmups = warmups;
  const ProfileReport rep = profile(cfg, net, set, opts);
  std::cout << rep.to_text();
  std::ofstream(out_path(cfg, "profile.json")) << rep.to_json() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-based joint source-channel image transmission"};
  app.require_subcommand(1);

  Common common;
  std::string checkpoint, resume, image, channel = "awgn";
  double snr = 10.0;
  int repeats = 20, warmups = 3, images = 8;
  int gen_count = 500, gen_size = 32;
  std::string gen_out = "data/shapes";
  std::uint64_t gen_seed = 0;

  auto* train = app.add_subcommand("train", "Train the denoiser");
  add_common(train, common);
  train->add_option("--checkpoint", resume, "Resume from this checkpoint");

  auto* tx = app.add_subcommand("transmit", "Send one image end to end and write a triptych");
  add_common(tx, common);
  tx->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  tx->add_option("--image", image, "Input PNG/JPEG")->required();
  tx->add_option("--channel", channel, "awgn or rayleigh")->check(CLI::IsMember({"awgn", "rayleigh"}));
  tx->add_option("--snr", snr, "Channel SNR in dB");

  auto* sweep = app.add_subcommand("sweep", "Evaluate the channel x SNR x mode grid");
  add_common(sweep, common);
  sweep->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();

  auto* prof = app.add_subcommand("profile", "Parameters, MACs and decode timing");
  add_common(prof, common);
  prof->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  prof->add_option("--snr", snr, "Channel SNR in dB");
  prof->add_option("--repeats", repeats, "Timed decodes")->check(CLI::PositiveNumber);
  prof->add_option("--warmups", warmups, "Untimed warm-up decodes")->check(CLI::NonNegativeNumber);
  prof->add_option("--images", images, "Images averaged for quality and update counts")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic shapes dataset");
  gen->add_option("--out", gen_out, "Target directory");
  gen->add_option("--count", gen_count, "Number of images")->check(CLI::PositiveNumber);
  gen->add_option("--size", gen_size, "Image side in pixels")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Generator seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(common, resume);
    if (*tx) return cmd_transmit(common, checkpoint, image, channel, snr);
    if (*sweep) return cmd_sweep(common, checkpoint);
    if (*prof) return cmd_profile(common, checkpoint, snr, repeats, warmups, images);
    if (*gen) {
      generate_synthetic_dataset(gen_out, gen_count, gen_size, gen_seed);
      std::cerr << "wrote " << gen_count << " images to " << gen_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
