#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "jscna/config.hpp"
#include "jscna/dataset.hpp"
#include "jscna/errors.hpp"
#include "jscna/profile.hpp"
#include "jscna/report.hpp"
#include "jscna/sweep.hpp"

using namespace jscna;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "jscna_test_harness" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

ExperimentConfig fast_config() {
  ExperimentConfig c = parse_config(
      "denoiser.preset = tiny\n"
      "alloc.n_min = 2\n"
      "alloc.n_max = 4\n"
      "decode.fixed_steps = 3\n"
      "data.image_size = 32\n"
      "data.eval_limit = 2\n"
      "seed = 5\n");
  return c;
}

}  // namespace

TEST_CASE("config defaults, round trip and hash") {
  const ExperimentConfig d;
  CHECK_NOTHROW(d.validate());
  CHECK(d.patches == 16);
  CHECK(d.n_min == 100);
  CHECK(d.n_max == 200);
  CHECK(d.snrs_db == std::vector<double>{0, 5, 10, 15, 20});

  const ExperimentConfig a = fast_config();
  const ExperimentConfig b = parse_config(a.serialize());
  CHECK(b.serialize() == a.serialize());
  CHECK(b.hash() == a.hash());
  CHECK(a.hash().size() == 16);

  ExperimentConfig c = a;
  apply_overrides(c, {"alloc.n_max=5"});
  CHECK(c.n_max == 5);
  CHECK(c.hash() != a.hash());

  // Preset applies before other denoiser keys whatever the line order.
  const ExperimentConfig p = parse_config("denoiser.base_channels = 24\ndenoiser.preset = tiny\n");
  CHECK(p.denoiser.base_channels == 24);
  CHECK(p.denoiser.levels == DenoiserConfig::tiny().levels);

  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_config("bogus.key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("alloc.n_min = 1\nalloc.n_min = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("alloc.patches = 15\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("alloc.n_min = 300\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("channel.kinds = awgn, nakagami\n"), ConfigError);
  CHECK_NOTHROW(parse_config("# comment only\n\n  \n"));
  try {
    parse_config("seed = 1\n\nbogus = 2\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
  ExperimentConfig c;
  CHECK_THROWS_AS(apply_overrides(c, {"alloc.n_max"}), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/jscna.conf"), ConfigError);
}

TEST_CASE("ingestion") {
  const fs::path dir = scratch("ingest");
  generate_synthetic_dataset(dir.string(), 100, 40, 3);
  {
    std::ofstream junk(dir / "zz_not_an_image.png");
    junk << "not a png";
  }
  const Dataset all = ingest_dataset(dir.string(), 96);
  CHECK(all.images.size() == 100);
  CHECK(all.images[0].shape() == Shape{1, 3, 96, 96});
  CHECK(all.name == "ingest");
  for (double v : all.images[7].values()) {
    REQUIRE(v >= -1.0);
    REQUIRE(v <= 1.0);
  }

  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().filename().string().rfind("img_", 0) == 0) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  const Dataset ten = ingest_dataset(dir.string(), 32, 10);
  REQUIRE(ten.files.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(fs::path(ten.files[i]).filename().string() == names[i]);
  CHECK(ingest_dataset(dir.string(), 32, 10).images[3] == ten.images[3]);

  const fs::path empty = scratch("empty");
  CHECK_THROWS_AS(ingest_dataset(empty.string(), 32), IngestionError);
  CHECK_THROWS_AS(ingest_dataset((empty / "missing").string(), 32), IngestionError);

  // Written images read back to the same 8-bit levels.
  write_image((dir / "roundtrip.out.png").string(), ten.images[0]);
  const Tensor back = read_image((dir / "roundtrip.out.png").string(), 32);
  for (std::size_t i = 0; i < back.size(); ++i) REQUIRE(back[i] == doctest::Approx(ten.images[0][i]).epsilon(1e-12));

  CHECK(synthetic_image(32, 1, 4) == synthetic_image(32, 1, 4));
  CHECK_FALSE(synthetic_image(32, 1, 4) == synthetic_image(32, 1, 5));
}

TEST_CASE("sweep rows, report files and determinism") {
  const fs::path dir = scratch("sweep_data");
  generate_synthetic_dataset(dir.string(), 3, 32, 9);
  const ExperimentConfig cfg = fast_config();
  const std::vector<Dataset> data{ingest_dataset(dir.string(), cfg.image_size, cfg.eval_limit)};
  const DenoiserNetwork net = build_denoiser(cfg.denoiser, 1);

  const SweepResult r1 = run_sweep(cfg, net, data);
  REQUIRE(r1.rows.size() == 20);
  CHECK(r1.failures() == 0);
  for (const auto& row : r1.rows) {
    CHECK(row.dataset == "sweep_data");
    CHECK(std::isfinite(row.psnr_db));
    if (row.mode == DecodeMode::fixed) CHECK(row.patch_updates == 16.0 * 3);
  }

  const fs::path out1 = scratch("report1"), out2 = scratch("report2");
  const auto files = emit_report(r1, cfg, out1.string(), "ckpt.bin");
  for (const auto& f : files) CHECK(fs::exists(f));
  CHECK(fs::exists(out1 / "psnr_sweep_data_awgn.png"));
  CHECK(fs::exists(out1 / "ms_ssim_sweep_data_rayleigh.png"));
  const auto csv = lines_of(slurp(out1 / "results.csv"));
  REQUIRE(csv.size() == 21);
  CHECK(csv[0] == kResultsHeader);
  CHECK(csv[1].rfind("sweep_data,awgn,0,adaptive,", 0) == 0);

  const SweepResult r2 = run_sweep(cfg, net, data);
  (void)emit_report(r2, cfg, out2.string(), "ckpt.bin");
  CHECK(slurp(out1 / "results.csv") == slurp(out2 / "results.csv"));
  CHECK(slurp(out1 / "manifest.txt") == slurp(out2 / "manifest.txt"));
  CHECK(slurp(out1 / "manifest.txt").find(cfg.hash()) != std::string::npos);
}

TEST_CASE("failed cells keep their row") {
  SweepResult r;
  SweepRow ok;
  ok.dataset = "d";
  ok.psnr_db = 20;
  ok.ms_ssim = 0.5;
  ok.patch_updates = 48;
  SweepRow bad = ok;
  bad.ok = false;
  bad.error = "boom";
  r.rows = {ok, bad};
  CHECK(r.failures() == 1);
  const auto l = lines_of(results_csv(r, false));
  REQUIRE(l.size() == 3);
  CHECK(l[1] == "d,awgn,0,adaptive,20.0000,0.500000,48.00,NA");
  CHECK(l[2] == "d,awgn,0,adaptive,NA,NA,NA,NA");
}

TEST_CASE("profile reports both modes") {
  const ExperimentConfig cfg = fast_config();
  const DenoiserNetwork net = build_denoiser(cfg.denoiser, 2);
  const std::vector<Tensor> imgs{synthetic_image(32, 1, 0), synthetic_image(32, 1, 1)};
  ProfileOptions opts;
  opts.warmups = 1;
  opts.repeats = 3;
  const ProfileReport p = profile(cfg, net, imgs, opts);
  CHECK(p.parameters == net.parameter_count());
  CHECK(p.macs_per_eval == net.mac_estimate(32, 32));
  REQUIRE(p.entries.size() == 3);
  CHECK(p.entries[0].mode == DecodeMode::adaptive);
  CHECK(p.entries[1].fixed_steps == 4);
  CHECK(p.entries[2].fixed_steps == 3);
  CHECK(p.entries[1].patch_updates == 64.0);
  CHECK(p.entries[0].patch_updates <= 64.0);
  for (const auto& e : p.entries) CHECK(e.median_ms > 0.0);
  const auto j = nlohmann::json::parse(p.to_json());
  CHECK(j["entries"].size() == 3);
  CHECK_FALSE(p.to_text().empty());
}

TEST_CASE("command line end to end") {
  const fs::path root = scratch("cli");
  const std::string cli = JSCNA_CLI_PATH;
  const auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " > \"" + (root / "cli.log").string() + "\" 2>&1";
    return std::system(cmd.c_str());
  };
  {
    std::ofstream conf(root / "run.conf");
    conf << "denoiser.preset = tiny\nalloc.n_min = 2\nalloc.n_max = 4\ndecode.fixed_steps = 3\n"
         << "data.image_size = 32\ndata.train_dir = " << (root / "data").string() << "\n"
         << "data.eval_dirs = " << (root / "data").string() << "\ndata.eval_limit = 2\n"
         << "training.batch_size = 2\ntraining.steps = 4\ntraining.log_interval = 2\n"
         << "training.checkpoint_interval = 2\nchannel.snrs_db = 10\n";
  }
  const std::string common = "--config \"" + (root / "run.conf").string() + "\" --out \"" + (root / "out").string() + "\"";
  REQUIRE(run("gen-data --out \"" + (root / "data").string() + "\" --count 6 --size 32 --seed 1") == 0);
  REQUIRE(run("train " + common) == 0);
  const fs::path ckpt = root / "out" / "checkpoint.bin";
  REQUIRE(fs::exists(ckpt));
  CHECK(read_checkpoint_info(ckpt.string()).step == 4);
  CHECK(fs::exists(root / "out" / "train_log.jsonl"));

  REQUIRE(run("sweep " + common + " --checkpoint \"" + ckpt.string() + "\"") == 0);
  const auto csv = lines_of(slurp(root / "out" / "results.csv"));
  CHECK(csv.size() == 5);

  REQUIRE(run("transmit " + common + " --checkpoint \"" + ckpt.string() + "\" --image \"" +
              (root / "data" / "img_00000.png").string() + "\" --snr 10 --channel rayleigh") == 0);
  CHECK(fs::exists(root / "out" / "triptych.png"));

  REQUIRE(run("profile " + common + " --checkpoint \"" + ckpt.string() + "\" --repeats 2 --warmups 0 --images 1") == 0);
  CHECK(fs::exists(root / "out" / "profile.json"));

  CHECK(run("sweep " + common + " --checkpoint \"" + (root / "missing.bin").string() + "\"") != 0);
  CHECK(run("train " + common + " --set no.such.key=1") != 0);
}
