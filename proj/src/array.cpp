#include "deari/array.hpp"

#include <cmath>

namespace deari {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

static size_t checked_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("negative array extent in " + shape_str(shape));
    n *= d;
  }
  return static_cast<size_t>(n);
}

Array::Array(Shape shape) : shape_(std::move(shape)), data_(checked_numel(shape_), real(0)) {}

Array::Array(Shape shape, real fill) : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

Array::Array(Shape shape, std::vector<real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_numel(shape_) != data_.size()) {
    throw std::invalid_argument("array data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

Array Array::row(std::vector<real> v) {
  const int64_t n = static_cast<int64_t>(v.size());
  return Array({n}, std::move(v));
}

void Array::fill(real v) {
  for (auto& x : data_) x = v;
}

bool Array::all_finite() const {
  for (real x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace deari
