#include "clinembed/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>

#include "clinembed/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace clinembed {

#if defined(__GLIBC__)
namespace {
// Training graphs allocate and free many multi-megabyte buffers per step.
// glibc's default serves those with fresh mmap()s, and the resulting page
// faults dominate run time, so keep them on the heap instead.
const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
}  // namespace
#endif

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), values_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.values_.begin(), t.values_.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(n * m);
  for (const auto& r : rows) {
    if (r.size() != m) throw ShapeError("ragged rows in Tensor::matrix");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor({n, m}, std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  }
  return shape_[axis];
}

double Tensor::at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }
double& Tensor::at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t m = shape_.back();
  return std::span<const double>(values_).subspan(r * m, m);
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t m = shape_.back();
  return std::span<double>(values_).subspan(r * m, m);
}

bool Tensor::all_finite() const {
  // Non-finite doubles are exactly those with an all-ones exponent.
  constexpr std::uint64_t kExponent = 0x7FF0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : values_) {
    bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExponent) == kExponent);
  }
  return bad == 0;
}

}  // namespace clinembed
