#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace msaunet::kernels::detail {

// Source sample for one output coordinate under the corner-aligned
// convention: output index 0 maps to input 0, output end maps to input end.
struct LerpTap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

inline LerpTap corner_aligned_tap(std::size_t dst, std::size_t in, std::size_t out) {
  if (in == out) return {dst, dst, 0.0};
  if (out == 1 || in == 1) return {0, 0, 0.0};
  const double scale = static_cast<double>(in - 1) / static_cast<double>(out - 1);
  const double src = static_cast<double>(dst) * scale;
  auto lo = static_cast<std::size_t>(std::floor(src));
  lo = std::min(lo, in - 1);
  const std::size_t hi = std::min(lo + 1, in - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace msaunet::kernels::detail
