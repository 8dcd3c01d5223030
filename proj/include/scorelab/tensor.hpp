#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "scorelab/errors.hpp"

namespace scorelab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// Dense row-major double tensor. The single value type for images, parameters,
// gradients and noise throughout the library.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }

  // Construction from external data validates extents and finiteness.
  static Tensor from_data(Shape shape, std::vector<double> data) {
    for (std::size_t e : shape) {
      if (e == 0) throw NumericError("tensor extent must be positive, got shape " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw NumericError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    for (double v : data) {
      if (!std::isfinite(v)) throw NumericError("non-finite value in tensor input");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return {data_.data(), data_.size()}; }
  std::span<const double> span() const noexcept { return {data_.data(), data_.size()}; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // 4-d accessor for [B,C,H,W] layouts used by image code.
  double& at4(std::size_t b, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at4(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  double item() const {
    if (numel() != 1) throw NumericError("item() requires a scalar tensor, got shape " + shape_str(shape_));
    return data_[0];
  }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  bool all_finite() const noexcept {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw NumericError("reshape " + shape_str(shape_) + " -> " + shape_str(s) + " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

  // Row-major slice of `count` leading-axis entries starting at `first`.
  Tensor slice0(std::size_t first, std::size_t count) const {
    if (rank() == 0 || first + count > shape_[0]) throw NumericError("slice0 out of range");
    std::size_t inner = numel() / shape_[0];
    Shape s = shape_;
    s[0] = count;
    Tensor t;
    t.shape_ = std::move(s);
    t.data_.assign(data_.begin() + static_cast<std::ptrdiff_t>(first * inner),
                   data_.begin() + static_cast<std::ptrdiff_t>((first + count) * inner));
    return t;
  }

  bool operator==(const Tensor& o) const noexcept { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    data_.assign(shape_numel(shape_), fill);
  }

  Shape shape_;
  std::vector<double> data_;
};

// Plain value-level arithmetic helpers (no tape). Used by metrics, samplers
// and anywhere gradients are not needed.
inline Tensor t_map(const Tensor& a, double (*f)(double)) {
  Tensor r = a;
  for (auto& v : r.span()) v = f(v);
  return r;
}

inline Tensor t_add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw NumericError("add shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor r = a;
  for (std::size_t i = 0; i < r.numel(); ++i) r[i] += b[i];
  return r;
}

inline Tensor t_sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw NumericError("sub shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor r = a;
  for (std::size_t i = 0; i < r.numel(); ++i) r[i] -= b[i];
  return r;
}

inline Tensor t_scale(const Tensor& a, double s) {
  Tensor r = a;
  for (auto& v : r.span()) v *= s;
  return r;
}

inline Tensor t_axpy(double s, const Tensor& a, const Tensor& b) {  // s*a + b
  if (!a.same_shape(b)) throw NumericError("axpy shape mismatch");
  Tensor r = b;
  for (std::size_t i = 0; i < r.numel(); ++i) r[i] += s * a[i];
  return r;
}

inline Tensor t_clamp(const Tensor& a, double lo, double hi) {
  Tensor r = a;
  for (auto& v : r.span()) v = v < lo ? lo : (v > hi ? hi : v);
  return r;
}

inline double t_dot(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw NumericError("dot shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

inline double t_max_abs(const Tensor& a) {
  double m = 0;
  for (double v : a.span()) m = std::max(m, std::abs(v));
  return m;
}

inline double t_max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw NumericError("max_abs_diff shape mismatch");
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double t_l2_norm(const Tensor& a) { return std::sqrt(t_dot(a, a)); }

inline double t_mean(const Tensor& a) {
  double s = 0;
  for (double v : a.span()) s += v;
  return s / static_cast<double>(a.numel());
}

}  // namespace scorelab
