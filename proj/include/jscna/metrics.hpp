#pragma once

#include <span>
#include <vector>

#include "jscna/tensor.hpp"

namespace jscna {

inline constexpr double kPsnrCapDb = 100.0;

struct MetricReport {
  double psnr_db = 0.0;
  double ms_ssim = 0.0;
  std::vector<double> per_image_psnr;
  std::vector<double> per_image_ms_ssim;
};

/// Maps [-1, 1] to 8-bit levels: clamp, scale to [0, 255], round.
Tensor to_8bit(const Tensor& x);

/// 10 log10(255^2 / MSE) over all elements; kPsnrCapDb when identical.
double psnr(const Tensor& x, const Tensor& y);

/// MS-SSIM exponents for five scales.
inline constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// Largest number of scales (<= 5) whose smallest level still exceeds the
/// 11-tap window footprint.
int ms_ssim_scales_for(int h, int w);

/// Multi-scale SSIM on [0, 255] images, Gaussian window 11 / sigma 1.5,
/// averaged over channels and batch items. Uses fewer scales (renormalized
/// weights) when the image is too small for `scales`, unless `allow_reduce`
/// is false, in which case that is an error.
double ms_ssim(const Tensor& x, const Tensor& y, int scales = 5, bool allow_reduce = true);

/// Weight vector actually used for `scales` levels (sums to 1).
std::vector<double> ms_ssim_weights(int scales);

/// Per-item and mean metrics for batches of [0, 255] images.
MetricReport evaluate_images(std::span<const Tensor> reference, std::span<const Tensor> test);

}  // namespace jscna
