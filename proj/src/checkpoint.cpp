#include <cstring>
#include <fstream>

#include "jscna/errors.hpp"
#include "jscna/training.hpp"

namespace jscna {
namespace {

constexpr char kMagic[8] = {'J', 'S', 'C', 'N', 'A', 'C', 'K', 'P'};

class Writer {
 public:
  explicit Writer(const std::string& path) : os_(path, std::ios::binary | std::ios::trunc) {
    if (!os_) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
  }
  template <typename T>
  void pod(const T& v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const Tensor& t) {
    const Shape s = t.shape();
    pod(static_cast<std::int32_t>(s.n));
    pod(static_cast<std::int32_t>(s.c));
    pod(static_cast<std::int32_t>(s.h));
    pod(static_cast<std::int32_t>(s.w));
    os_.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  void finish(const std::string& path) {
    os_.flush();
    if (!os_) throw CheckpointError("checkpoint: write to '" + path + "' failed");
  }
  std::ofstream& raw() { return os_; }

 private:
  std::ofstream os_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), is_(path, std::ios::binary) {
    if (!is_) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  }
  template <typename T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > (1u << 20)) throw CheckpointError("checkpoint: corrupt string length in '" + path_ + "'");
    std::string s(n, '\0');
    is_.read(s.data(), n);
    check();
    return s;
  }
  Tensor tensor() {
    Shape s;
    s.n = pod<std::int32_t>();
    s.c = pod<std::int32_t>();
    s.h = pod<std::int32_t>();
    s.w = pod<std::int32_t>();
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0 || s.size() > (std::size_t{1} << 32)) {
      throw CheckpointError("checkpoint: corrupt tensor header in '" + path_ + "'");
    }
    Tensor t(s);
    is_.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    check();
    return t;
  }
  void magic() {
    char m[8];
    is_.read(m, 8);
    check();
    if (std::memcmp(m, kMagic, 8) != 0) throw CheckpointError("checkpoint: '" + path_ + "' is not a checkpoint");
  }

 private:
  void check() {
    if (!is_) throw CheckpointError("checkpoint: truncated file '" + path_ + "'");
  }
  std::string path_;
  std::ifstream is_;
};

CheckpointInfo read_header(Reader& r, const std::string& path) {
  r.magic();
  CheckpointInfo info;
  info.version = r.pod<std::uint32_t>();
  if (info.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: '" + path + "' has version " + std::to_string(info.version) +
                          ", expected " + std::to_string(kCheckpointVersion));
  }
  info.denoiser_config = r.str();
  info.step = r.pod<std::uint64_t>();
  return info;
}

}  // namespace

void save_checkpoint(const std::string& path, const DenoiserNetwork& net, const AdamOptimizer* opt,
                     std::uint64_t step) {
  Writer w(path);
  w.raw().write(kMagic, 8);
  w.pod(kCheckpointVersion);
  w.str(net.config().serialize());
  w.pod(step);
  const auto& params = net.parameters();
  w.pod(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.tensor(p.var.value());
  }
  const bool has_opt = opt != nullptr && !opt->first_moments().empty();
  w.pod(static_cast<std::uint8_t>(has_opt ? 1 : 0));
  if (has_opt) {
    w.pod(opt->steps_taken());
    for (const auto& m : opt->first_moments()) w.tensor(m);
    for (const auto& v : opt->second_moments()) w.tensor(v);
  }
  w.finish(path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  Reader r(path);
  return read_header(r, path);
}

CheckpointInfo load_checkpoint(const std::string& path, DenoiserNetwork& net, AdamOptimizer* opt) {
  Reader r(path);
  const CheckpointInfo info = read_header(r, path);
  const std::string expected = net.config().serialize();
  if (info.denoiser_config != expected) {
    throw CheckpointError("checkpoint: config mismatch; file has '" + info.denoiser_config +
                          "', network expects '" + expected + "'");
  }
  const auto& params = net.parameters();
  const auto count = r.pod<std::uint32_t>();
  if (count != params.size()) throw CheckpointError("checkpoint: parameter count mismatch");
  std::vector<Tensor> values;
  values.reserve(count);
  for (const auto& p : params) {
    const std::string name = r.str();
    if (name != p.name) throw CheckpointError("checkpoint: expected parameter '" + p.name + "', found '" + name + "'");
    Tensor t = r.tensor();
    if (!(t.shape() == p.var.shape())) throw CheckpointError("checkpoint: shape mismatch for '" + name + "'");
    values.push_back(std::move(t));
  }
  const auto has_opt = r.pod<std::uint8_t>();
  std::uint64_t opt_steps = 0;
  std::vector<Tensor> m, v;
  if (has_opt) {
    opt_steps = r.pod<std::uint64_t>();
    for (std::size_t i = 0; i < params.size(); ++i) m.push_back(r.tensor());
    for (std::size_t i = 0; i < params.size(); ++i) v.push_back(r.tensor());
  }
  // Commit only after the whole file parsed.
  for (std::size_t i = 0; i < params.size(); ++i) {
    ag::Var var = params[i].var;
    var.mutable_value() = std::move(values[i]);
  }
  if (opt && has_opt) opt->restore(opt_steps, std::move(m), std::move(v));
  return info;
}

}  // namespace jscna
