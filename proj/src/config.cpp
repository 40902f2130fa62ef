#include "jscna/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "jscna/errors.hpp"

namespace jscna {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

long long parse_integer(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  const long long x = parse_integer(key, v);
  if (x < -2147483647LL || x > 2147483647LL) throw ConfigError("config: '" + key + "' out of range");
  return static_cast<int>(x);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& item : split_list(v)) out.push_back(parse_int(key, item));
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += f(xs[i]);
  }
  return out;
}

std::string align_name(AlignMode m) { return m == AlignMode::matched ? "matched" : "literal"; }
std::string patch_schedule_name(PatchScheduleMode m) {
  return m == PatchScheduleMode::strided ? "strided" : "countdown";
}
std::string sigma_name(SigmaMode m) { return m == SigmaMode::posterior ? "posterior" : "zero"; }

DenoiserConfig preset(const std::string& name) {
  if (name == "desk") return DenoiserConfig::desk();
  if (name == "paper") return DenoiserConfig::paper();
  if (name == "tiny") return DenoiserConfig::tiny();
  throw ConfigError("config: unknown denoiser preset '" + name + "' (desk, paper, tiny)");
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"schedule.T", [](auto& c, auto& k, auto& v) { c.T = parse_int(k, v); }},
      {"schedule.beta_start", [](auto& c, auto& k, auto& v) { c.beta_start = parse_double(k, v); }},
      {"schedule.beta_end", [](auto& c, auto& k, auto& v) { c.beta_end = parse_double(k, v); }},
      {"channel.kinds",
       [](auto& c, auto&, auto& v) {
         c.channel_kinds.clear();
         for (const auto& item : split_list(v)) c.channel_kinds.push_back(channel_kind_from_string(item));
       }},
      {"channel.snrs_db",
       [](auto& c, auto& k, auto& v) {
         c.snrs_db.clear();
         for (const auto& item : split_list(v)) c.snrs_db.push_back(parse_double(k, item));
       }},
      {"channel.gain_floor", [](auto& c, auto& k, auto& v) { c.gain_floor = parse_double(k, v); }},
      {"alloc.patches", [](auto& c, auto& k, auto& v) { c.patches = parse_int(k, v); }},
      {"alloc.n_min", [](auto& c, auto& k, auto& v) { c.n_min = parse_int(k, v); }},
      {"alloc.n_max", [](auto& c, auto& k, auto& v) { c.n_max = parse_int(k, v); }},
      {"decode.modes",
       [](auto& c, auto&, auto& v) {
         c.modes.clear();
         for (const auto& item : split_list(v)) c.modes.push_back(decode_mode_from_string(item));
       }},
      {"decode.fixed_steps", [](auto& c, auto& k, auto& v) { c.fixed_steps = parse_int(k, v); }},
      {"decode.align",
       [](auto& c, auto& k, auto& v) {
         if (v == "matched") c.align = AlignMode::matched;
         else if (v == "literal") c.align = AlignMode::literal;
         else throw ConfigError("config: '" + k + "' expects matched|literal");
       }},
      {"decode.patch_schedule",
       [](auto& c, auto& k, auto& v) {
         if (v == "strided") c.patch_schedule = PatchScheduleMode::strided;
         else if (v == "countdown") c.patch_schedule = PatchScheduleMode::countdown;
         else throw ConfigError("config: '" + k + "' expects strided|countdown");
       }},
      {"decode.sigma",
       [](auto& c, auto& k, auto& v) {
         if (v == "posterior") c.sigma = SigmaMode::posterior;
         else if (v == "zero") c.sigma = SigmaMode::zero;
         else throw ConfigError("config: '" + k + "' expects posterior|zero");
       }},
      {"decode.attention_level", [](auto& c, auto& k, auto& v) { c.attention_level = parse_int(k, v); }},
      {"denoiser.preset",
       [](auto& c, auto&, auto& v) {
         c.denoiser = preset(v);
         c.denoiser_preset = v;
       }},
      {"denoiser.levels", [](auto& c, auto& k, auto& v) { c.denoiser.levels = parse_int(k, v); }},
      {"denoiser.base_channels", [](auto& c, auto& k, auto& v) { c.denoiser.base_channels = parse_int(k, v); }},
      {"denoiser.multipliers",
       [](auto& c, auto& k, auto& v) { c.denoiser.channel_multipliers = parse_int_list(k, v); }},
      {"denoiser.attention_levels",
       [](auto& c, auto& k, auto& v) { c.denoiser.attention_levels = parse_int_list(k, v); }},
      {"denoiser.time_embed_dim", [](auto& c, auto& k, auto& v) { c.denoiser.time_embed_dim = parse_int(k, v); }},
      {"denoiser.heads", [](auto& c, auto& k, auto& v) { c.denoiser.attention_heads = parse_int(k, v); }},
      {"denoiser.groups", [](auto& c, auto& k, auto& v) { c.denoiser.norm_groups = parse_int(k, v); }},
      {"training.beta", [](auto& c, auto& k, auto& v) { c.training.beta_tradeoff = parse_double(k, v); }},
      {"training.batch_size", [](auto& c, auto& k, auto& v) { c.training.batch_size = parse_int(k, v); }},
      {"training.steps", [](auto& c, auto& k, auto& v) { c.training.step_budget = parse_int(k, v); }},
      {"training.learning_rate",
       [](auto& c, auto& k, auto& v) { c.training.learning_rate = parse_double(k, v); }},
      {"training.channel_augment",
       [](auto& c, auto& k, auto& v) { c.training.channel_augment = parse_bool(k, v); }},
      {"training.augment_snr_min_db",
       [](auto& c, auto& k, auto& v) { c.training.augment_snr_min_db = parse_double(k, v); }},
      {"training.augment_snr_max_db",
       [](auto& c, auto& k, auto& v) { c.training.augment_snr_max_db = parse_double(k, v); }},
      {"training.log_interval", [](auto& c, auto& k, auto& v) { c.training.log_interval = parse_int(k, v); }},
      {"training.checkpoint_interval",
       [](auto& c, auto& k, auto& v) { c.checkpoint_interval = parse_int(k, v); }},
      {"data.train_dir", [](auto& c, auto&, auto& v) { c.train_dir = v; }},
      {"data.eval_dirs", [](auto& c, auto&, auto& v) { c.eval_dirs = split_list(v); }},
      {"data.image_size", [](auto& c, auto& k, auto& v) { c.image_size = parse_int(k, v); }},
      {"data.train_limit", [](auto& c, auto& k, auto& v) { c.train_limit = parse_int(k, v); }},
      {"data.eval_limit", [](auto& c, auto& k, auto& v) { c.eval_limit = parse_int(k, v); }},
      {"output_dir", [](auto& c, auto&, auto& v) { c.output_dir = v; }},
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = parse_u64(k, v); }},
      {"sweep.record_timing", [](auto& c, auto& k, auto& v) { c.record_timing = parse_bool(k, v); }},
  };
  return table;
}

void finalize(ExperimentConfig& cfg) {
  cfg.denoiser.max_timestep = cfg.T;
  cfg.training.seed = cfg.seed;
  cfg.validate();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (T < 1) throw ConfigError("config: schedule.T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("config: require 0 < schedule.beta_start <= schedule.beta_end < 1");
  }
  if (channel_kinds.empty()) throw ConfigError("config: channel.kinds must not be empty");
  if (snrs_db.empty()) throw ConfigError("config: channel.snrs_db must not be empty");
  if (!(gain_floor > 0.0)) throw ConfigError("config: channel.gain_floor must be > 0");
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(std::max(patches, 0)))));
  if (patches < 1 || side * side != patches) {
    throw ConfigError("config: alloc.patches must be a perfect square, got " + std::to_string(patches));
  }
  if (n_min < 1 || n_min > n_max) throw ConfigError("config: require 1 <= alloc.n_min <= alloc.n_max");
  if (n_max > T) throw ConfigError("config: alloc.n_max exceeds schedule.T");
  if (modes.empty()) throw ConfigError("config: decode.modes must not be empty");
  if (fixed_steps < 1 || fixed_steps > T) throw ConfigError("config: decode.fixed_steps must be in [1, T]");
  if (image_size < 1) throw ConfigError("config: data.image_size must be >= 1");
  if (image_size % side != 0) {
    throw ConfigError("config: data.image_size " + std::to_string(image_size) + " not divisible by patch grid side " +
                      std::to_string(side));
  }
  if (train_limit < 0 || eval_limit < 0) throw ConfigError("config: data limits must be >= 0");
  if (checkpoint_interval < 1) throw ConfigError("config: training.checkpoint_interval must be >= 1");
  denoiser.validate();
  denoiser.validate_image(image_size, image_size);
  training.validate();
}

PatchGrid ExperimentConfig::grid() const {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(patches))));
  return PatchGrid{side, side};
}

NoiseSchedule ExperimentConfig::schedule() const { return build_schedule(T, beta_start, beta_end); }

TransmitConfig ExperimentConfig::transmit_config(ChannelKind kind, double snr_db, DecodeMode mode) const {
  TransmitConfig t;
  t.channel.kind = kind;
  t.channel.snr_db = snr_db;
  t.channel.gain_floor = gain_floor;
  t.grid = grid();
  t.n_min = n_min;
  t.n_max = n_max;
  t.mode = mode;
  t.fixed_steps = fixed_steps;
  t.align = align;
  t.patch_schedule = patch_schedule;
  t.sigma = sigma;
  return t;
}

std::map<std::string, std::string> ExperimentConfig::to_map() const {
  const auto id = [](const std::string& s) { return s; };
  const auto num = [](int v) { return std::to_string(v); };
  std::map<std::string, std::string> m;
  m["schedule.T"] = std::to_string(T);
  m["schedule.beta_start"] = fmt_double(beta_start);
  m["schedule.beta_end"] = fmt_double(beta_end);
  m["channel.kinds"] = join(channel_kinds, [](ChannelKind k) { return to_string(k); });
  m["channel.snrs_db"] = join(snrs_db, fmt_double);
  m["channel.gain_floor"] = fmt_double(gain_floor);
  m["alloc.patches"] = std::to_string(patches);
  m["alloc.n_min"] = std::to_string(n_min);
  m["alloc.n_max"] = std::to_string(n_max);
  m["decode.modes"] = join(modes, [](DecodeMode d) { return to_string(d); });
  m["decode.fixed_steps"] = std::to_string(fixed_steps);
  m["decode.align"] = align_name(align);
  m["decode.patch_schedule"] = patch_schedule_name(patch_schedule);
  m["decode.sigma"] = sigma_name(sigma);
  m["decode.attention_level"] = std::to_string(attention_level);
  m["denoiser.preset"] = denoiser_preset;
  m["denoiser.levels"] = std::to_string(denoiser.levels);
  m["denoiser.base_channels"] = std::to_string(denoiser.base_channels);
  m["denoiser.multipliers"] = join(denoiser.channel_multipliers, num);
  m["denoiser.attention_levels"] = join(denoiser.attention_levels, num);
  m["denoiser.time_embed_dim"] = std::to_string(denoiser.time_embed_dim);
  m["denoiser.heads"] = std::to_string(denoiser.attention_heads);
  m["denoiser.groups"] = std::to_string(denoiser.norm_groups);
  m["training.beta"] = fmt_double(training.beta_tradeoff);
  m["training.batch_size"] = std::to_string(training.batch_size);
  m["training.steps"] = std::to_string(training.step_budget);
  m["training.learning_rate"] = fmt_double(training.learning_rate);
  m["training.channel_augment"] = training.channel_augment ? "true" : "false";
  m["training.augment_snr_min_db"] = fmt_double(training.augment_snr_min_db);
  m["training.augment_snr_max_db"] = fmt_double(training.augment_snr_max_db);
  m["training.log_interval"] = std::to_string(training.log_interval);
  m["training.checkpoint_interval"] = std::to_string(checkpoint_interval);
  m["data.train_dir"] = train_dir;
  m["data.eval_dirs"] = join(eval_dirs, id);
  m["data.image_size"] = std::to_string(image_size);
  m["data.train_limit"] = std::to_string(train_limit);
  m["data.eval_limit"] = std::to_string(eval_limit);
  m["output_dir"] = output_dir;
  m["seed"] = std::to_string(seed);
  m["sweep.record_timing"] = record_timing ? "true" : "false";
  return m;
}

std::string ExperimentConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(serialize())));
  return buf;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second(cfg, key, value);
}

ExperimentConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError("config: line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    entries.emplace_back(std::move(key), std::move(value));
  }
  ExperimentConfig cfg;
  std::stable_partition(entries.begin(), entries.end(),
                        [](const auto& e) { return e.first == "denoiser.preset"; });
  for (const auto& [k, v] : entries) set_config_value(cfg, k, v);
  finalize(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("config: override '" + a + "' is not key=value");
    set_config_value(cfg, trim(a.substr(0, eq)), trim(a.substr(eq + 1)));
  }
  finalize(cfg);
}

}  // namespace jscna
