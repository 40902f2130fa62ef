#include "jscna/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "jscna/errors.hpp"
#include "jscna/rng.hpp"

namespace fs = std::filesystem;

namespace jscna {
namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

Tensor from_mat(const cv::Mat& bgr, int image_size) {
  const int side = std::min(bgr.rows, bgr.cols);
  const cv::Rect roi((bgr.cols - side) / 2, (bgr.rows - side) / 2, side, side);
  cv::Mat square = bgr(roi);
  cv::Mat resized;
  if (side != image_size) {
    const int interp = side > image_size ? cv::INTER_AREA : cv::INTER_CUBIC;
    cv::resize(square, resized, cv::Size(image_size, image_size), 0, 0, interp);
  } else {
    resized = square;
  }
  Tensor t(Shape{1, 3, image_size, image_size});
  for (int y = 0; y < image_size; ++y) {
    const auto* row = resized.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image_size; ++x) {
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = row[x][2 - c] / 127.5 - 1.0;
    }
  }
  return t;
}

cv::Mat to_mat(const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("write_image: expected (1, 3, h, w), got " + s.str());
  cv::Mat m(s.h, s.w, CV_8UC3);
  for (int y = 0; y < s.h; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(0, c, y, x), -1.0, 1.0);
        row[x][2 - c] = static_cast<unsigned char>(std::lround((v + 1.0) * 127.5));
      }
    }
  }
  return m;
}

cv::Mat load_bgr(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  return m;
}

}  // namespace

Tensor read_image(const std::string& path, int image_size) {
  if (image_size < 1) throw ConfigError("read_image: image_size must be >= 1");
  const cv::Mat m = load_bgr(path);
  if (m.empty()) throw IngestionError("read_image: cannot decode '" + path + "'");
  return from_mat(m, image_size);
}

Dataset ingest_dataset(const std::string& dir, int image_size, int limit) {
  if (image_size < 1) throw ConfigError("ingest_dataset: image_size must be >= 1");
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IngestionError("ingest_dataset: '" + dir + "' is not a directory");
  std::vector<std::string> candidates;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) candidates.push_back(entry.path().string());
  }
  std::sort(candidates.begin(), candidates.end());

  Dataset ds;
  ds.name = fs::path(dir).lexically_normal().filename().string();
  if (ds.name.empty()) ds.name = fs::path(dir).lexically_normal().parent_path().filename().string();
  ds.image_size = image_size;
  for (const auto& path : candidates) {
    if (limit > 0 && static_cast<int>(ds.images.size()) >= limit) break;
    const cv::Mat m = load_bgr(path);
    if (m.empty()) continue;
    ds.images.push_back(from_mat(m, image_size));
    ds.files.push_back(path);
  }
  if (ds.images.empty()) throw IngestionError("ingest_dataset: no decodable PNG/JPEG files in '" + dir + "'");
  return ds;
}

void write_image(const std::string& path, const Tensor& image) {
  const cv::Mat m = to_mat(image);
  bool ok = false;
  try {
    ok = cv::imwrite(path, m);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw std::runtime_error("write_image: cannot write '" + path + "'");
}

Tensor hconcat_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw ShapeError("hconcat_images: no images");
  const Shape s = images.front().shape();
  constexpr int kGap = 2;
  const int n = static_cast<int>(images.size());
  Tensor out(Shape{1, s.c, s.h, n * s.w + (n - 1) * kGap}, 1.0);
  for (int k = 0; k < n; ++k) {
    if (!(images[k].shape() == s)) throw ShapeError("hconcat_images: shape mismatch");
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(0, c, y, k * (s.w + kGap) + x) = images[k].at(0, c, y, x);
  }
  return out;
}

Tensor synthetic_image(int size, std::uint64_t seed, int index) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto colour = [&] { return cv::Scalar(u(rng) * 255.0, u(rng) * 255.0, u(rng) * 255.0); };

  // Background: linear blend between two colours along a random direction.
  const cv::Scalar c0 = colour(), c1 = colour();
  const double angle = u(rng) * 2.0 * M_PI;
  const double dx = std::cos(angle), dy = std::sin(angle);
  cv::Mat img(size, size, CV_8UC3);
  for (int y = 0; y < size; ++y) {
    auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < size; ++x) {
      const double p = 0.5 + ((x + 0.5) / size - 0.5) * dx + ((y + 0.5) / size - 0.5) * dy;
      const double a = std::clamp(p, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) row[x][c] = cv::saturate_cast<unsigned char>((1 - a) * c0[c] + a * c1[c]);
    }
  }

  std::uniform_int_distribution<int> count(1, 3);
  std::uniform_int_distribution<int> kind(0, 2);
  const int shapes = count(rng);
  for (int k = 0; k < shapes; ++k) {
    const cv::Point centre(static_cast<int>(u(rng) * size), static_cast<int>(u(rng) * size));
    const int extent = std::max(2, static_cast<int>((0.12 + 0.22 * u(rng)) * size));
    const cv::Scalar col = colour();
    switch (kind(rng)) {
      case 0:
        cv::circle(img, centre, extent, col, cv::FILLED, cv::LINE_AA);
        break;
      case 1: {
        const int half_w = extent, half_h = std::max(2, static_cast<int>(extent * (0.5 + u(rng))));
        cv::rectangle(img, cv::Point(centre.x - half_w, centre.y - half_h),
                      cv::Point(centre.x + half_w, centre.y + half_h), col, cv::FILLED);
        break;
      }
      default: {
        const int thickness = std::max(1, size / 16);
        for (int off = -extent; off <= extent; off += 3 * thickness) {
          cv::line(img, cv::Point(centre.x - extent, centre.y + off), cv::Point(centre.x + extent, centre.y + off),
                   col, thickness, cv::LINE_AA);
        }
        break;
      }
    }
  }
  return from_mat(img, size);
}

void generate_synthetic_dataset(const std::string& dir, int count, int size, std::uint64_t seed) {
  if (count < 1 || size < 1) throw ConfigError("generate_synthetic_dataset: count and size must be >= 1");
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d.png", i);
    write_image((fs::path(dir) / name).string(), synthetic_image(size, seed, i));
  }
}

}  // namespace jscna
