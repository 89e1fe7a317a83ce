#include "msaunet/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <sstream>

#include "msaunet/errors.hpp"

namespace msaunet {

std::size_t element_count(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (shape_ != other.shape_) {
    throw ShapeError("cannot add " + shape_string(other.shape_) + " to " + shape_string(shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Tensor Tensor::sample(std::size_t n) const {
  if (rank() != 4 || n >= shape_[0]) throw ShapeError("sample index out of range");
  const std::size_t per = shape_[1] * shape_[2] * shape_[3];
  Tensor out({1, shape_[1], shape_[2], shape_[3]});
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(n * per), per, out.data_.begin());
  return out;
}

Tensor stack_batch(std::span<const Tensor> samples) {
  if (samples.empty()) throw ShapeError("cannot stack an empty batch");
  const auto& first = samples.front().shape();
  if (first.size() != 4) throw ShapeError("stack_batch expects rank-4 tensors");
  std::size_t total = 0;
  for (const auto& s : samples) {
    if (s.rank() != 4 || s.dim(1) != first[1] || s.dim(2) != first[2] || s.dim(3) != first[3]) {
      throw ShapeError("stack_batch: sample shape " + shape_string(s.shape()) + " differs from " +
                       shape_string(first));
    }
    total += s.dim(0);
  }
  Tensor out({total, first[1], first[2], first[3]});
  auto it = out.values().begin();
  for (const auto& s : samples) it = std::copy(s.values().begin(), s.values().end(), it);
  return out;
}

std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (auto d : t.shape()) mix(&d, sizeof d);
  mix(t.data(), t.size() * sizeof(double));
  return h;
}

}  // namespace msaunet
