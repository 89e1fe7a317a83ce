#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "msaunet/autograd.hpp"
#include "msaunet/tensor.hpp"
#include "msaunet/types.hpp"

namespace testing {

inline msaunet::Tensor random_tensor(const msaunet::Tensor::Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                     double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  msaunet::Tensor t(shape);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

inline msaunet::ClassMask random_mask(std::size_t h, std::size_t w, std::size_t classes, std::mt19937_64& rng) {
  msaunet::ClassMask m(h, w, classes);
  std::uniform_int_distribution<int> dist(0, static_cast<int>(classes) - 1);
  for (auto& l : m.labels) l = dist(rng);
  return m;
}

// |a - b| / max(|a|, |b|, floor)
inline double rel_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_abs_diff(const msaunet::Tensor& a, const msaunet::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Scalar probe L = sum(seed * f()). Compares the tape's gradient for every
// input against central differences; returns the worst relative error.
inline double gradient_check(std::vector<msaunet::ag::Var> inputs,
                             const std::function<msaunet::ag::Var()>& f, std::mt19937_64& rng,
                             double step = 1e-6) {
  for (auto& v : inputs) v.zero_grad();
  const msaunet::ag::Var out = f();
  const msaunet::Tensor seed = random_tensor(out.shape(), rng);
  msaunet::ag::backward(out, seed);
  auto probe = [&] {
    msaunet::ag::NoGradGuard guard;
    const msaunet::Tensor y = f().value();
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += seed[i] * y[i];
    return s;
  };
  double worst = 0.0;
  for (auto& v : inputs) {
    const msaunet::Tensor analytic = v.grad().empty() ? msaunet::Tensor(v.shape()) : v.grad();
    for (std::size_t i = 0; i < v.value().size(); ++i) {
      const double keep = v.value()[i];
      v.value()[i] = keep + step;
      const double up = probe();
      v.value()[i] = keep - step;
      const double down = probe();
      v.value()[i] = keep;
      worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * step), 1e-6));
    }
  }
  return worst;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("msaunet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
