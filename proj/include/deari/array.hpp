#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace deari {

#ifdef DEARI_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

/// Thrown when operand shapes do not conform; message names the op and shapes.
class ShapeError : public std::runtime_error {
 public:
  ShapeError(const std::string& op, const std::string& detail)
      : std::runtime_error("shape error in op '" + op + "': " + detail) {}
};

/// Dense row-major array of rank 1..3. The flat buffer always satisfies
/// product(shape) == data.size().
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape);
  Array(Shape shape, real fill);
  Array(Shape shape, std::vector<real> data);

  static Array zeros(Shape shape) { return Array(std::move(shape)); }
  static Array full(Shape shape, real v) { return Array(std::move(shape), v); }
  static Array scalar(real v) { return Array({1}, {v}); }
  static Array row(std::vector<real> v);

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  std::vector<real>& buffer() { return data_; }
  const std::vector<real>& buffer() const { return data_; }

  real& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  real operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  real& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  real at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  real& at(int64_t b, int64_t i, int64_t j) {
    return data_[static_cast<size_t>((b * shape_[1] + i) * shape_[2] + j)];
  }
  real at(int64_t b, int64_t i, int64_t j) const {
    return data_[static_cast<size_t>((b * shape_[1] + i) * shape_[2] + j)];
  }

  void fill(real v);
  bool all_finite() const;
  bool same_shape(const Array& o) const { return shape_ == o.shape_; }
  std::string shape_string() const { return shape_str(shape_); }

 private:
  Shape shape_;
  std::vector<real> data_;
};

}  // namespace deari
