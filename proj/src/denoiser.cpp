#include "jscna/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

#include "jscna/errors.hpp"
#include "jscna/rng.hpp"

namespace jscna {

// ---------------------------------------------------------------------------
// Config

DenoiserConfig DenoiserConfig::paper() {
  DenoiserConfig c;
  c.levels = 6;
  c.base_channels = 64;
  c.channel_multipliers = {1, 2, 4, 8, 8, 8};
  c.attention_levels = {4, 5};
  c.time_embed_dim = 256;
  c.attention_heads = 4;
  c.norm_groups = 32;
  return c;
}

DenoiserConfig DenoiserConfig::desk() { return DenoiserConfig{}; }

DenoiserConfig DenoiserConfig::tiny() {
  DenoiserConfig c;
  c.levels = 4;
  c.base_channels = 16;
  c.channel_multipliers = {1, 2, 2, 2};
  c.attention_levels = {3};
  c.time_embed_dim = 64;
  c.attention_heads = 2;
  c.norm_groups = 4;
  return c;
}

void DenoiserConfig::validate() const {
  if (levels < 2) throw ConfigError("denoiser: levels must be >= 2");
  if (static_cast<int>(channel_multipliers.size()) != levels) {
    throw ConfigError("denoiser: channel_multipliers needs " + std::to_string(levels) + " entries");
  }
  if (base_channels < 1 || image_channels < 1 || norm_groups < 1 || attention_heads < 1) {
    throw ConfigError("denoiser: channel, group and head counts must be positive");
  }
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
    throw ConfigError("denoiser: time_embed_dim must be even and >= 2");
  }
  if (max_timestep < 1) throw ConfigError("denoiser: max_timestep must be >= 1");
  for (int m : channel_multipliers) {
    if (m < 1) throw ConfigError("denoiser: channel multipliers must be >= 1");
  }
  for (int l : attention_levels) {
    if (l < 0 || l >= levels) {
      throw ConfigError("denoiser: attention level " + std::to_string(l) + " outside [0, " +
                        std::to_string(levels - 1) + "]");
    }
    if (channels_at(l) % attention_heads != 0) {
      throw ConfigError("denoiser: " + std::to_string(channels_at(l)) +
                        " channels not divisible by attention_heads at level " + std::to_string(l));
    }
  }
}

void DenoiserConfig::validate_image(int h, int w) const {
  const int factor = 1 << (levels - 1);
  if (h < factor || w < factor || h % factor != 0 || w % factor != 0) {
    throw ConfigError("denoiser: image " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by downsampling factor " + std::to_string(factor));
  }
}

int DenoiserConfig::channels_at(int level) const {
  return base_channels * channel_multipliers.at(static_cast<std::size_t>(level));
}

bool DenoiserConfig::has_attention(int level) const {
  return std::find(attention_levels.begin(), attention_levels.end(), level) != attention_levels.end();
}

int DenoiserConfig::deepest_attention_level() const {
  if (attention_levels.empty()) throw ConfigError("denoiser: no attention levels configured");
  return *std::max_element(attention_levels.begin(), attention_levels.end());
}

namespace {

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

}  // namespace

std::string DenoiserConfig::serialize() const {
  std::ostringstream os;
  os << "levels=" << levels << ";base=" << base_channels << ";mult=" << join(channel_multipliers)
     << ";attn=" << join(attention_levels) << ";temb=" << time_embed_dim << ";img=" << image_channels
     << ";heads=" << attention_heads << ";groups=" << norm_groups << ";T=" << max_timestep;
  return os.str();
}

DenoiserConfig DenoiserConfig::deserialize(const std::string& text) {
  DenoiserConfig c;
  std::stringstream ss(text);
  std::string kv;
  while (std::getline(ss, kv, ';')) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("denoiser config: malformed entry '" + kv + "'");
    const std::string k = kv.substr(0, eq);
    const std::string v = kv.substr(eq + 1);
    if (k == "levels") c.levels = std::stoi(v);
    else if (k == "base") c.base_channels = std::stoi(v);
    else if (k == "mult") c.channel_multipliers = split_ints(v);
    else if (k == "attn") c.attention_levels = split_ints(v);
    else if (k == "temb") c.time_embed_dim = std::stoi(v);
    else if (k == "img") c.image_channels = std::stoi(v);
    else if (k == "heads") c.attention_heads = std::stoi(v);
    else if (k == "groups") c.norm_groups = std::stoi(v);
    else if (k == "T") c.max_timestep = std::stoi(v);
    else throw ConfigError("denoiser config: unknown key '" + k + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Layers

namespace {

struct Conv {
  ag::Var w, b;
  int stride = 1;
  int pad = 0;
  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, w, b, stride, pad); }
};

struct Linear {
  ag::Var w, b;
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, w, b); }
};

struct Norm {
  ag::Var gamma, beta;
  int groups = 1;
  ag::Var operator()(const ag::Var& x) const { return ag::group_norm(x, gamma, beta, groups); }
};

struct ResBlock {
  Norm norm1;
  Conv conv1;
  Linear time_proj;
  Norm norm2;
  Conv conv2;
  std::optional<Conv> skip;

  ag::Var operator()(const ag::Var& x, const ag::Var& temb) const {
    ag::Var h = conv1(ag::silu(norm1(x)));
    h = ag::add_channel_bias(h, time_proj(temb));
    h = conv2(ag::silu(norm2(h)));
    return ag::add(h, skip ? (*skip)(x) : x);
  }
};

struct AttnBlock {
  Norm norm;
  Conv qkv;
  Conv proj;
  int heads = 1;

  ag::Var operator()(const ag::Var& x, Tensor* probs) const {
    ag::Var a = ag::self_attention(qkv(norm(x)), heads, probs);
    return ag::add(x, proj(a));
  }
};

int norm_groups_for(int channels, int preferred) { return std::gcd(channels, preferred); }

class ParamFactory {
 public:
  ParamFactory(std::vector<NamedParameter>& out, std::uint64_t seed) : out_(out), rng_(seed) {}

  ag::Var uniform(const std::string& name, Shape shape, double bound) {
    Tensor t(shape);
    std::uniform_real_distribution<double> ud(-bound, bound);
    for (double& v : t.values()) v = ud(rng_);
    return add(name, std::move(t));
  }
  ag::Var filled(const std::string& name, Shape shape, double value) {
    return add(name, Tensor(shape, value));
  }

  Conv conv(const std::string& name, int in, int out, int k, int stride = 1) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
    Conv c;
    c.w = uniform(name + ".weight", Shape{out, in, k, k}, bound);
    c.b = uniform(name + ".bias", Shape{1, out, 1, 1}, bound);
    c.stride = stride;
    c.pad = k / 2;
    return c;
  }
  Linear linear(const std::string& name, int in, int out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.w = uniform(name + ".weight", Shape{out, in, 1, 1}, bound);
    l.b = uniform(name + ".bias", Shape{1, out, 1, 1}, bound);
    return l;
  }
  Norm norm(const std::string& name, int c, int preferred_groups) {
    Norm n;
    n.gamma = filled(name + ".gamma", Shape{1, c, 1, 1}, 1.0);
    n.beta = filled(name + ".beta", Shape{1, c, 1, 1}, 0.0);
    n.groups = norm_groups_for(c, preferred_groups);
    return n;
  }
  ResBlock res(const std::string& name, int in, int out, int temb, int groups) {
    ResBlock r;
    r.norm1 = norm(name + ".norm1", in, groups);
    r.conv1 = conv(name + ".conv1", in, out, 3);
    r.time_proj = linear(name + ".time_proj", temb, out);
    r.norm2 = norm(name + ".norm2", out, groups);
    r.conv2 = conv(name + ".conv2", out, out, 3);
    if (in != out) r.skip = conv(name + ".skip", in, out, 1);
    return r;
  }
  AttnBlock attn(const std::string& name, int c, int heads, int groups) {
    AttnBlock a;
    a.norm = norm(name + ".norm", c, groups);
    a.qkv = conv(name + ".qkv", c, 3 * c, 1);
    a.proj = conv(name + ".proj", c, c, 1);
    a.heads = heads;
    return a;
  }

 private:
  ag::Var add(const std::string& name, Tensor t) {
    ag::Var v = ag::parameter(std::move(t));
    out_.push_back({name, v});
    return v;
  }
  std::vector<NamedParameter>& out_;
  Rng rng_;
};

}  // namespace

struct DenoiserNetwork::Impl {
  Linear time1, time2;
  Conv stem;
  std::vector<ResBlock> down_res;
  std::vector<std::optional<AttnBlock>> down_attn;
  std::vector<std::optional<Conv>> downsample;
  ResBlock mid1;
  std::optional<AttnBlock> mid_attn;
  ResBlock mid2;
  std::vector<ResBlock> up_res;  // indexed by level
  std::vector<std::optional<AttnBlock>> up_attn;
  std::vector<std::optional<Conv>> upsample;
  Norm out_norm;
  Conv out_conv;
};

DenoiserNetwork::DenoiserNetwork(DenoiserConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>()) {
  cfg_.validate();
  ParamFactory pf(params_, seed);
  const int d = cfg_.time_embed_dim;
  const int g = cfg_.norm_groups;
  const int L = cfg_.levels;
  Impl& m = *impl_;

  m.time1 = pf.linear("time.fc1", d, d);
  m.time2 = pf.linear("time.fc2", d, d);
  m.stem = pf.conv("stem", cfg_.image_channels, cfg_.channels_at(0), 3);

  int ch = cfg_.channels_at(0);
  m.down_attn.resize(static_cast<std::size_t>(L));
  m.downsample.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    const std::string p = "down" + std::to_string(l);
    const int out = cfg_.channels_at(l);
    m.down_res.push_back(pf.res(p + ".res", ch, out, d, g));
    ch = out;
    if (cfg_.has_attention(l)) m.down_attn[l] = pf.attn(p + ".attn", ch, cfg_.attention_heads, g);
    if (l < L - 1) m.downsample[l] = pf.conv(p + ".downsample", ch, ch, 3, 2);
  }

  m.mid1 = pf.res("mid.res1", ch, ch, d, g);
  if (cfg_.has_attention(L - 1)) m.mid_attn = pf.attn("mid.attn", ch, cfg_.attention_heads, g);
  m.mid2 = pf.res("mid.res2", ch, ch, d, g);

  m.up_res.resize(static_cast<std::size_t>(L));
  m.up_attn.resize(static_cast<std::size_t>(L));
  m.upsample.resize(static_cast<std::size_t>(L));
  for (int l = L - 1; l >= 0; --l) {
    const std::string p = "up" + std::to_string(l);
    const int out = cfg_.channels_at(l);
    m.up_res[l] = pf.res(p + ".res", ch + out, out, d, g);
    ch = out;
    if (cfg_.has_attention(l)) m.up_attn[l] = pf.attn(p + ".attn", ch, cfg_.attention_heads, g);
    if (l > 0) m.upsample[l] = pf.conv(p + ".upsample", ch, ch, 3);
  }

  m.out_norm = pf.norm("out.norm", ch, g);
  m.out_conv = pf.conv("out.conv", ch, cfg_.image_channels, 3);
}

DenoiserNetwork::DenoiserNetwork(DenoiserNetwork&&) noexcept = default;
DenoiserNetwork& DenoiserNetwork::operator=(DenoiserNetwork&&) noexcept = default;
DenoiserNetwork::~DenoiserNetwork() = default;

Tensor timestep_embedding(std::span<const int> t, int dim) {
  const int half = dim / 2;
  Tensor out(Shape{static_cast<int>(t.size()), dim, 1, 1});
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      const double arg = t[i] * freq;
      out[i * dim + k] = std::sin(arg);
      out[i * dim + half + k] = std::cos(arg);
    }
  }
  return out;
}

ag::Var DenoiserNetwork::forward(const ag::Var& x, std::span<const int> t, AttentionCapture* capture) const {
  const Shape s = x.shape();
  if (s.c != cfg_.image_channels) {
    throw ShapeError("denoiser: expected " + std::to_string(cfg_.image_channels) + " channels, got " +
                     s.str());
  }
  cfg_.validate_image(s.h, s.w);
  if (t.size() != static_cast<std::size_t>(s.n)) throw ShapeError("denoiser: one timestep per item");
  for (int ti : t) {
    if (ti < 1 || ti > cfg_.max_timestep) {
      throw RangeError("denoiser: timestep " + std::to_string(ti) + " outside [1, " +
                       std::to_string(cfg_.max_timestep) + "]");
    }
  }
  int capture_level = -1;
  if (capture) {
    capture_level = capture->level < 0 ? cfg_.deepest_attention_level() : capture->level;
    if (!cfg_.has_attention(capture_level)) {
      throw ConfigError("attention capture: level " + std::to_string(capture_level) +
                        " has no self-attention block");
    }
    capture->captured = false;
  }

  const Impl& m = *impl_;
  const int L = cfg_.levels;
  ag::Var temb = ag::constant(timestep_embedding(t, cfg_.time_embed_dim));
  temb = ag::silu(m.time2(ag::silu(m.time1(temb))));

  ag::Var h = m.stem(x);
  std::vector<ag::Var> skips;
  for (int l = 0; l < L; ++l) {
    h = m.down_res[l](h, temb);
    if (m.down_attn[l]) {
      const bool grab = capture && l == capture_level;
      h = (*m.down_attn[l])(h, grab ? &capture->probs : nullptr);
      if (grab) {
        capture->token_rows = h.shape().h;
        capture->token_cols = h.shape().w;
        capture->captured = true;
      }
    }
    skips.push_back(h);
    if (m.downsample[l]) h = (*m.downsample[l])(h);
  }

  h = m.mid1(h, temb);
  if (m.mid_attn) h = (*m.mid_attn)(h, nullptr);
  h = m.mid2(h, temb);

  for (int l = L - 1; l >= 0; --l) {
    h = ag::concat_channels(h, skips[l]);
    h = m.up_res[l](h, temb);
    if (m.up_attn[l]) h = (*m.up_attn[l])(h, nullptr);
    if (m.upsample[l]) h = (*m.upsample[l])(ag::upsample_nearest2x(h));
  }
  return m.out_conv(ag::silu(m.out_norm(h)));
}

Tensor DenoiserNetwork::predict_noise(const Tensor& x_t, int t) const {
  std::vector<int> ts(static_cast<std::size_t>(x_t.shape().n), t);
  return predict_noise(x_t, ts);
}

Tensor DenoiserNetwork::predict_noise(const Tensor& x_t, std::span<const int> t) const {
  ag::NoGradGuard guard;
  return forward(ag::constant(x_t), t).value();
}

std::size_t DenoiserNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

int DenoiserNetwork::widest_channels() const {
  int w = 0;
  for (int l = 0; l < cfg_.levels; ++l) w = std::max(w, cfg_.channels_at(l));
  return w;
}

std::uint64_t DenoiserNetwork::mac_estimate(int h, int w) const {
  cfg_.validate_image(h, w);
  using u64 = std::uint64_t;
  const u64 d = static_cast<u64>(cfg_.time_embed_dim);
  auto conv = [](u64 in, u64 out, u64 k, u64 hh, u64 ww) { return in * out * k * k * hh * ww; };
  auto res = [&](u64 in, u64 out, u64 hh, u64 ww) {
    u64 m = conv(in, out, 3, hh, ww) + d * out + conv(out, out, 3, hh, ww);
    if (in != out) m += conv(in, out, 1, hh, ww);
    return m;
  };
  auto attn = [&](u64 c, u64 hh, u64 ww) {
    const u64 tok = hh * ww;
    return conv(c, 3 * c, 1, hh, ww) + 2 * tok * tok * c + conv(c, c, 1, hh, ww);
  };

  u64 macs = 2 * d * d;
  u64 hh = static_cast<u64>(h), ww = static_cast<u64>(w);
  u64 ch = static_cast<u64>(cfg_.channels_at(0));
  macs += conv(static_cast<u64>(cfg_.image_channels), ch, 3, hh, ww);
  std::vector<u64> skip_ch;
  for (int l = 0; l < cfg_.levels; ++l) {
    const u64 out = static_cast<u64>(cfg_.channels_at(l));
    macs += res(ch, out, hh, ww);
    ch = out;
    if (cfg_.has_attention(l)) macs += attn(ch, hh, ww);
    skip_ch.push_back(ch);
    if (l < cfg_.levels - 1) {
      hh /= 2;
      ww /= 2;
      macs += conv(ch, ch, 3, hh, ww);
    }
  }
  macs += 2 * res(ch, ch, hh, ww);
  if (cfg_.has_attention(cfg_.levels - 1)) macs += attn(ch, hh, ww);
  for (int l = cfg_.levels - 1; l >= 0; --l) {
    const u64 out = static_cast<u64>(cfg_.channels_at(l));
    macs += res(ch + skip_ch[static_cast<std::size_t>(l)], out, hh, ww);
    ch = out;
    if (cfg_.has_attention(l)) macs += attn(ch, hh, ww);
    if (l > 0) {
      hh *= 2;
      ww *= 2;
      macs += conv(ch, ch, 3, hh, ww);
    }
  }
  macs += conv(ch, static_cast<u64>(cfg_.image_channels), 3, hh, ww);
  return macs;
}

DenoiserNetwork build_denoiser(const DenoiserConfig& cfg, std::uint64_t seed) {
  return DenoiserNetwork(cfg, seed);
}

// ---------------------------------------------------------------------------
// Attention extraction

AttentionMap pool_attention(std::span<const double> token_probs, int token_rows, int token_cols,
                            PatchGrid grid) {
  const int tokens = token_rows * token_cols;
  if (token_probs.size() != static_cast<std::size_t>(tokens) * tokens) {
    throw ShapeError("pool_attention: probability matrix does not match token grid");
  }
  if (grid.rows < 1 || grid.cols < 1 || token_rows % grid.rows != 0 || token_cols % grid.cols != 0) {
    throw ConfigError("pool_attention: token grid " + std::to_string(token_rows) + "x" +
                      std::to_string(token_cols) + " does not tile into patch grid " +
                      std::to_string(grid.rows) + "x" + std::to_string(grid.cols));
  }
  const int by = token_rows / grid.rows;
  const int bx = token_cols / grid.cols;
  const int n = grid.count();
  auto patch_of = [&](int tok) {
    const int r = tok / token_cols;
    const int c = tok % token_cols;
    return (r / by) * grid.cols + (c / bx);
  };
  AttentionMap out;
  out.grid = grid;
  out.weights.assign(static_cast<std::size_t>(n) * n, 0.0);
  const double inv_members = 1.0 / static_cast<double>(by * bx);
  for (int q = 0; q < tokens; ++q) {
    const int pq = patch_of(q);
    for (int k = 0; k < tokens; ++k) {
      out.weights[static_cast<std::size_t>(pq) * n + patch_of(k)] +=
          token_probs[static_cast<std::size_t>(q) * tokens + k] * inv_members;
    }
  }
  return out;
}

AttentionMap extract_attention(const DenoiserNetwork& net, const Tensor& image, int t, PatchGrid grid,
                               int level) {
  if (image.shape().n != 1) throw ShapeError("extract_attention: expects a single image");
  AttentionCapture cap;
  cap.level = level;
  {
    ag::NoGradGuard guard;
    std::vector<int> ts{t};
    (void)net.forward(ag::constant(image), ts, &cap);
  }
  if (!cap.captured) throw ConfigError("extract_attention: selected layer produced no attention");
  return pool_attention(cap.probs.values(), cap.token_rows, cap.token_cols, grid);
}

AttentionMap DenoiserAttentionScorer::score(const Tensor& image, int t, PatchGrid grid) const {
  return extract_attention(net_, image, t, grid, level_);
}

}  // namespace jscna
