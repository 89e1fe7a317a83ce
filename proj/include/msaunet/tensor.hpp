#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace msaunet {

// Dense row-major array of doubles with an arbitrary-rank shape.
//
// Feature maps are rank-4 NCHW tensors; a single image is a batch of one.
// Weights use the usual layouts: conv [out, in, k, k], transposed conv
// [in, out, k, k], vectors rank-1.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor nchw(std::size_t n, std::size_t c, std::size_t h, std::size_t w, double fill = 0.0) {
    return Tensor({n, c, h, w}, fill);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // NCHW accessors; only meaningful on rank-4 tensors.
  std::size_t batch() const { return shape_[0]; }
  std::size_t channels() const { return shape_[1]; }
  std::size_t height() const { return shape_[2]; }
  std::size_t width() const { return shape_[3]; }
  std::size_t plane() const { return shape_[2] * shape_[3]; }

  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  // Copy of sample n of a rank-4 tensor as a batch of one.
  Tensor sample(std::size_t n) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool operator==(const Tensor& other) const { return shape_ == other.shape_ && data_ == other.data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t element_count(const Tensor::Shape& shape);
std::string shape_string(const Tensor::Shape& shape);

// Concatenate rank-4 tensors along the batch axis.
Tensor stack_batch(std::span<const Tensor> samples);

// FNV-1a over the raw bytes; used to compare weights for bit-identity.
std::uint64_t checksum(const Tensor& t);

}  // namespace msaunet
