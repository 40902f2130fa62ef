#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jscna/tensor.hpp"

namespace jscna {

/// Decoded images in [-1, 1], each (1, 3, size, size), RGB.
struct Dataset {
  std::string name;  ///< directory basename
  std::vector<std::string> files;
  std::vector<Tensor> images;
  int image_size = 0;
};

/// Loads PNG/JPEG files from `dir` in lexicographic order, center-crops to a
/// square, resizes to `image_size` and scales to [-1, 1]. `limit` > 0 keeps
/// only the first `limit` decodable files. Undecodable files are skipped;
/// an empty result throws IngestionError.
Dataset ingest_dataset(const std::string& dir, int image_size, int limit = 0);

/// Reads one image file with the same preprocessing as ingest_dataset.
Tensor read_image(const std::string& path, int image_size);

/// Writes a (1, 3, h, w) image in [-1, 1] as 8-bit PNG.
void write_image(const std::string& path, const Tensor& image);

/// Side-by-side concatenation of equally sized images with a 2 px gap.
Tensor hconcat_images(const std::vector<Tensor>& images);

/// Procedural scenes: smooth two-colour gradient background with a few
/// random discs, boxes and stripes. Deterministic in (seed, index).
Tensor synthetic_image(int size, std::uint64_t seed, int index);

/// Writes `count` synthetic scenes to `dir` as img_00000.png, ...
void generate_synthetic_dataset(const std::string& dir, int count, int size, std::uint64_t seed);

}  // namespace jscna
