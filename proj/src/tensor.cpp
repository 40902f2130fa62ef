#include "jscna/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "jscna/errors.hpp"

namespace jscna {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, const std::vector<double>& data)
    : Tensor(shape, Buffer(data.begin(), data.end())) {}

Tensor::Tensor(Shape shape, Buffer data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

Tensor Tensor::item(int i) const {
  Shape s{1, shape_.c, shape_.h, shape_.w};
  const auto stride = shape_.item_size();
  Buffer out(data_.begin() + static_cast<std::ptrdiff_t>(i * stride),
                          data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
  return Tensor(s, std::move(out));
}

void Tensor::set_item(int i, const Tensor& src) {
  if (src.shape().item_size() != shape_.item_size()) {
    throw ShapeError("set_item: item shape mismatch " + src.shape().str() +
                     " into " + shape_.str());
  }
  std::copy(src.data_.begin(), src.data_.end(),
            data_.begin() + static_cast<std::ptrdiff_t>(i * shape_.item_size()));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

double Tensor::mean_square() const {
  if (data_.empty()) return 0.0;
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return acc / static_cast<double>(data_.size());
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& o) {
  require_same_shape(*this, o, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
  require_same_shape(*this, o, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack: no items");
  Shape s = items.front().shape();
  for (const auto& it : items) {
    if (it.shape().n != 1 || it.shape().item_size() != s.item_size() ||
        it.shape().c != s.c) {
      throw ShapeError("stack: incompatible item " + it.shape().str());
    }
  }
  s.n = static_cast<int>(items.size());
  Tensor out(s);
  for (int i = 0; i < s.n; ++i) out.set_item(i, items[static_cast<std::size_t>(i)]);
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
}

}  // namespace jscna
