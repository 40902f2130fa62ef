#include "jscna/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "jscna/errors.hpp"

namespace jscna {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

struct Plane {
  int h = 0;
  int w = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

std::vector<double> gaussian_window() {
  std::vector<double> g(kWindow);
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-(d * d) / (2.0 * kSigma * kSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Separable "valid" filtering.
Plane filter(const Plane& p, const std::vector<double>& g) {
  Plane tmp{p.h, p.w - kWindow + 1, {}};
  tmp.v.resize(static_cast<std::size_t>(tmp.h) * tmp.w);
  for (int y = 0; y < tmp.h; ++y)
    for (int x = 0; x < tmp.w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * p.at(y, x + k);
      tmp.v[static_cast<std::size_t>(y) * tmp.w + x] = acc;
    }
  Plane out{p.h - kWindow + 1, tmp.w, {}};
  out.v.resize(static_cast<std::size_t>(out.h) * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * tmp.at(y + k, x);
      out.v[static_cast<std::size_t>(y) * out.w + x] = acc;
    }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out{a.h, a.w, std::vector<double>(a.v.size())};
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

// 2x2 average, dropping a trailing odd row/column.
Plane downsample(const Plane& p) {
  Plane out{p.h / 2, p.w / 2, {}};
  out.v.resize(static_cast<std::size_t>(out.h) * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      out.v[static_cast<std::size_t>(y) * out.w + x] =
          0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) +
                  p.at(2 * y + 1, 2 * x + 1));
    }
  return out;
}

// Mean SSIM and mean contrast-structure term of one plane pair.
std::pair<double, double> ssim_terms(const Plane& a, const Plane& b, const std::vector<double>& g) {
  const Plane mu1 = filter(a, g);
  const Plane mu2 = filter(b, g);
  const Plane s11 = filter(product(a, a), g);
  const Plane s22 = filter(product(b, b), g);
  const Plane s12 = filter(product(a, b), g);
  double ssim_sum = 0.0, cs_sum = 0.0;
  for (std::size_t i = 0; i < mu1.v.size(); ++i) {
    const double m1 = mu1.v[i], m2 = mu2.v[i];
    const double v1 = s11.v[i] - m1 * m1;
    const double v2 = s22.v[i] - m2 * m2;
    const double cov = s12.v[i] - m1 * m2;
    const double cs = (2.0 * cov + kC2) / (v1 + v2 + kC2);
    const double lum = (2.0 * m1 * m2 + kC1) / (m1 * m1 + m2 * m2 + kC1);
    ssim_sum += lum * cs;
    cs_sum += cs;
  }
  const auto n = static_cast<double>(mu1.v.size());
  return {ssim_sum / n, cs_sum / n};
}

Plane extract_plane(const Tensor& t, int n, int c) {
  const Shape s = t.shape();
  Plane p{s.h, s.w, {}};
  const double* src = t.data() + (static_cast<std::size_t>(n) * s.c + c) * s.plane();
  p.v.assign(src, src + s.plane());
  return p;
}

}  // namespace

Tensor to_8bit(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::clamp(x[i], -1.0, 1.0);
    out[i] = std::round((v + 1.0) * 127.5);
  }
  return out;
}

double psnr(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "psnr");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(255.0 * 255.0 / mse));
}

int ms_ssim_scales_for(int h, int w) {
  const int side = std::min(h, w);
  int scales = 0;
  for (int k = 1; k <= 5; ++k) {
    if ((side >> (k - 1)) >= kWindow) scales = k;
  }
  return scales;
}

std::vector<double> ms_ssim_weights(int scales) {
  if (scales < 1 || scales > 5) throw ConfigError("ms_ssim: scales must be in [1, 5]");
  std::vector<double> w(kMsSsimWeights, kMsSsimWeights + scales);
  double sum = 0.0;
  for (double v : w) sum += v;
  for (double& v : w) v /= sum;
  return w;
}

double ms_ssim(const Tensor& x, const Tensor& y, int scales, bool allow_reduce) {
  require_same_shape(x, y, "ms_ssim");
  const Shape s = x.shape();
  const int fit = ms_ssim_scales_for(s.h, s.w);
  if (fit < 1) {
    throw ConfigError("ms_ssim: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                      " smaller than the 11-pixel window");
  }
  if (fit < scales) {
    if (!allow_reduce) {
      throw ConfigError("ms_ssim: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                        " too small for " + std::to_string(scales) + " scales");
    }
    scales = fit;
  }
  const std::vector<double> weights = ms_ssim_weights(scales);
  const std::vector<double> g = gaussian_window();

  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      Plane a = extract_plane(x, n, c);
      Plane b = extract_plane(y, n, c);
      double value = 1.0;
      for (int k = 0; k < scales; ++k) {
        const auto [ssim, cs] = ssim_terms(a, b, g);
        const double term = std::max(k == scales - 1 ? ssim : cs, 0.0);
        value *= std::pow(term, weights[static_cast<std::size_t>(k)]);
        if (k < scales - 1) {
          a = downsample(a);
          b = downsample(b);
        }
      }
      total += value;
    }
  }
  return std::clamp(total / static_cast<double>(s.n * s.c), 0.0, 1.0);
}

MetricReport evaluate_images(std::span<const Tensor> reference, std::span<const Tensor> test) {
  if (reference.size() != test.size()) throw ShapeError("evaluate_images: batch size mismatch");
  MetricReport r;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    r.per_image_psnr.push_back(psnr(reference[i], test[i]));
    r.per_image_ms_ssim.push_back(ms_ssim(reference[i], test[i]));
  }
  if (!reference.empty()) {
    double p = 0.0, m = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
      p += r.per_image_psnr[i];
      m += r.per_image_ms_ssim[i];
    }
    r.psnr_db = p / static_cast<double>(reference.size());
    r.ms_ssim = m / static_cast<double>(reference.size());
  }
  return r;
}

}  // namespace jscna
