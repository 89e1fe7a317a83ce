#include "msaunet/metrics.hpp"

#include <cstdio>

#include "msaunet/errors.hpp"

namespace msaunet {
namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

bool present(const ConfusionMatrix& cm, std::size_t n) { return cm.row_sum(n) + cm.col_sum(n) > 0; }

void require_counts(const ConfusionMatrix& cm, const char* what) {
  if (cm.total() == 0) throw EmptyMatrixError(std::string(what) + ": confusion matrix is empty");
}

template <class PerClass>
double class_mean(const ConfusionMatrix& cm, ClassAverage average, PerClass per_class) {
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t n = 0; n < cm.num_classes(); ++n) {
    if (present(cm, n)) {
      sum += per_class(n);
      ++used;
    } else if (average == ClassAverage::AllClasses) {
      ++used;
    }
  }
  return used == 0 ? 0.0 : sum / static_cast<double>(used);
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::optional<std::int32_t> ignore_index)
    : n_(num_classes), ignore_(ignore_index), counts_(num_classes * num_classes, 0) {
  if (num_classes < 1) throw InvalidSpecError("ConfusionMatrix: num_classes must be >= 1");
}

void ConfusionMatrix::accumulate(const ClassMask& pred, const ClassMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width || pred.size() != gt.size()) {
    throw ShapeError("accumulate: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  const auto n = static_cast<std::int32_t>(n_);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::int32_t t = gt.labels[i];
    if (ignore_ && t == *ignore_) continue;
    const std::int32_t p = pred.labels[i];
    if (t < 0 || t >= n) throw LabelError("accumulate: ground-truth label " + std::to_string(t) + " out of range");
    if (p < 0 || p >= n) throw LabelError("accumulate: predicted label " + std::to_string(p) + " out of range");
    ++counts_[static_cast<std::size_t>(t) * n_ + static_cast<std::size_t>(p)];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw ShapeError("merge: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t m = 0; m < n_; ++m) s += counts_[truth * n_ + m];
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < n_; ++t) s += counts_[t * n_ + predicted];
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  require_counts(cm, "pixel_accuracy");
  std::uint64_t diag = 0;
  for (std::size_t n = 0; n < cm.num_classes(); ++n) diag += cm.count(n, n);
  return static_cast<double>(diag) / static_cast<double>(cm.total());
}

double class_iou(const ConfusionMatrix& cm, std::size_t n) {
  const std::uint64_t denom = cm.row_sum(n) + cm.col_sum(n) - cm.count(n, n);
  return denom == 0 ? 0.0 : static_cast<double>(cm.count(n, n)) / static_cast<double>(denom);
}

double class_dice(const ConfusionMatrix& cm, std::size_t n) {
  const std::uint64_t denom = cm.row_sum(n) + cm.col_sum(n);
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(cm.count(n, n)) / static_cast<double>(denom);
}

double mean_iou(const ConfusionMatrix& cm, ClassAverage average) {
  require_counts(cm, "mean_iou");
  return class_mean(cm, average, [&](std::size_t n) { return class_iou(cm, n); });
}

double fw_iou(const ConfusionMatrix& cm) {
  require_counts(cm, "fw_iou");
  double sum = 0.0;
  for (std::size_t n = 0; n < cm.num_classes(); ++n) {
    sum += static_cast<double>(cm.row_sum(n)) * class_iou(cm, n);
  }
  return sum / static_cast<double>(cm.total());
}

double dice_coefficient(const ConfusionMatrix& cm, ClassAverage average) {
  require_counts(cm, "dice_coefficient");
  return class_mean(cm, average, [&](std::size_t n) { return class_dice(cm, n); });
}

MetricsReport MetricsReport::from(const ConfusionMatrix& cm, ClassAverage average) {
  MetricsReport r;
  r.pixel_accuracy = msaunet::pixel_accuracy(cm);
  r.mean_iou = msaunet::mean_iou(cm, average);
  r.fw_iou = msaunet::fw_iou(cm);
  r.dice = dice_coefficient(cm, average);
  for (std::size_t n = 0; n < cm.num_classes(); ++n) {
    r.per_class_iou.push_back(class_iou(cm, n));
    if (present(cm, n)) ++r.valid_classes;
  }
  return r;
}

std::string MetricsReport::to_text() const {
  std::string s;
  s += "pixel_accuracy: " + fixed6(pixel_accuracy) + "\n";
  s += "mean_iou: " + fixed6(mean_iou) + "\n";
  s += "fw_iou: " + fixed6(fw_iou) + "\n";
  s += "dice: " + fixed6(dice) + "\n";
  s += "valid_classes: " + std::to_string(valid_classes) + "\n";
  for (std::size_t n = 0; n < per_class_iou.size(); ++n) {
    s += "iou_class_" + std::to_string(n) + ": " + fixed6(per_class_iou[n]) + "\n";
  }
  return s;
}

std::string MetricsReport::csv_header() const {
  std::string s = "pixel_accuracy,mean_iou,fw_iou,dice,valid_classes";
  for (std::size_t n = 0; n < per_class_iou.size(); ++n) s += ",iou_class_" + std::to_string(n);
  return s;
}

std::string MetricsReport::csv_row() const {
  std::string s = fixed6(pixel_accuracy) + "," + fixed6(mean_iou) + "," + fixed6(fw_iou) + "," + fixed6(dice) + "," +
                  std::to_string(valid_classes);
  for (double v : per_class_iou) s += "," + fixed6(v);
  return s;
}

}  // namespace msaunet
