#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "msaunet/tensor.hpp"

namespace msaunet {

// Per-pixel class indices. Values >= num_classes are void and are skipped by
// the losses and the confusion matrix (when they match its ignore index).
struct ClassMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<std::int32_t> labels;

  ClassMask() = default;
  ClassMask(std::size_t h, std::size_t w, std::size_t classes, std::int32_t fill = 0)
      : height(h), width(w), num_classes(classes), labels(h * w, fill) {}

  std::int32_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::int32_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::size_t size() const { return labels.size(); }
  bool is_void(std::size_t i) const {
    return labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes;
  }
};

// Shape log written by forward passes when a Trace is supplied.
struct TraceEvent {
  std::string block;
  std::string tensor;
  Tensor::Shape shape;
};

struct Trace {
  std::vector<TraceEvent> events;

  void record(std::string block, std::string tensor, const Tensor::Shape& shape) {
    events.push_back({std::move(block), std::move(tensor), shape});
  }
  // First event matching block and tensor, or nullptr.
  const TraceEvent* find(const std::string& block, const std::string& tensor) const {
    for (const auto& e : events) {
      if (e.block == block && e.tensor == tensor) return &e;
    }
    return nullptr;
  }
};

}  // namespace msaunet
