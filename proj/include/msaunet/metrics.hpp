#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msaunet/types.hpp"

namespace msaunet {

// counts(n, m): pixels of true class n predicted as class m.
class ConfusionMatrix {
 public:
  static constexpr std::int32_t kDefaultIgnore = 255;

  explicit ConfusionMatrix(std::size_t num_classes, std::optional<std::int32_t> ignore_index = kDefaultIgnore);

  // Ground-truth pixels equal to the ignore index are skipped; any other
  // label outside [0, num_classes) raises LabelError.
  void accumulate(const ClassMask& pred, const ClassMask& gt);
  void merge(const ConfusionMatrix& other);

  std::size_t num_classes() const { return n_; }
  std::optional<std::int32_t> ignore_index() const { return ignore_; }
  std::uint64_t count(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t predicted) const;
  std::uint64_t total() const;

  bool operator==(const ConfusionMatrix& other) const = default;

 private:
  std::size_t n_;
  std::optional<std::int32_t> ignore_;
  std::vector<std::uint64_t> counts_;
};

// How per-class scores are averaged. Present averages over classes that
// occur in the ground truth or the prediction; AllClasses divides by N.
enum class ClassAverage { Present, AllClasses };

double pixel_accuracy(const ConfusionMatrix& cm);
double class_iou(const ConfusionMatrix& cm, std::size_t n);
double class_dice(const ConfusionMatrix& cm, std::size_t n);
double mean_iou(const ConfusionMatrix& cm, ClassAverage average = ClassAverage::Present);
double fw_iou(const ConfusionMatrix& cm);
double dice_coefficient(const ConfusionMatrix& cm, ClassAverage average = ClassAverage::Present);

struct MetricsReport {
  double pixel_accuracy = 0.0;
  double mean_iou = 0.0;
  double fw_iou = 0.0;
  double dice = 0.0;
  std::vector<double> per_class_iou;  // 0 for absent classes
  std::size_t valid_classes = 0;

  static MetricsReport from(const ConfusionMatrix& cm, ClassAverage average = ClassAverage::Present);

  // "key: value" lines, six fractional digits.
  std::string to_text() const;
  std::string csv_header() const;
  std::string csv_row() const;
};

}  // namespace msaunet
