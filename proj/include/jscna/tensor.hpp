#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace jscna {

/// NCHW extent. Images are (1, 3, h, w); vectors are (n, features, 1, 1).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t item_size() const {
    return static_cast<std::size_t>(c) * h * w;
  }
  [[nodiscard]] std::size_t plane() const {
    return static_cast<std::size_t>(h) * w;
  }
  bool operator==(const Shape&) const = default;
  [[nodiscard]] std::string str() const;
};

/// Cache-line aligned allocation. Eigen's vectorized kernels peel leading
/// elements up to the first aligned address, so a fixed base alignment keeps
/// summation order (and results) independent of where the heap put a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major NCHW tensor of doubles with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, const std::vector<double>& data);
  Tensor(Shape shape, Buffer data);

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::span<double> values() { return data_; }
  [[nodiscard]] std::span<const double> values() const { return data_; }
  [[nodiscard]] double* data() { return data_.data(); }
  [[nodiscard]] const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int y, int x) {
    return data_[index(n, c, y, x)];
  }
  [[nodiscard]] double at(int n, int c, int y, int x) const {
    return data_[index(n, c, y, x)];
  }

  [[nodiscard]] std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w +
           x;
  }

  /// Copy of batch item `i` as a (1, c, h, w) tensor.
  [[nodiscard]] Tensor item(int i) const;
  void set_item(int i, const Tensor& src);

  void fill(double v);
  [[nodiscard]] double sum() const;
  [[nodiscard]] double mean() const;
  [[nodiscard]] double mean_square() const;
  [[nodiscard]] bool all_finite() const;

  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& operator*=(double s);

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  Buffer data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

/// Stacks (1, c, h, w) tensors into one (n, c, h, w) batch.
Tensor stack(std::span<const Tensor> items);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace jscna
