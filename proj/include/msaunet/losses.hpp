#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "msaunet/tensor.hpp"
#include "msaunet/types.hpp"

// Segmentation losses on a single image's class maps. Per-image tensors are
// rank-3 [classes, H, W]; batched entry points take rank-4 logits and
// average the per-image totals.
namespace msaunet {

enum class WceReduction { Sum, Mean };

struct CompoundLossConfig {
  double w_iou = 1.0;
  double w_dice = 0.01;
  double w_wce = 0.8;
  double dice_alpha = 1.0;
  double eps1 = 1.0;  // boundary bonus
  double eps2 = 1.0;  // background bonus
  std::int32_t background_class = 0;
  WceReduction wce_reduction = WceReduction::Mean;

  void validate() const;
};

enum class ProbabilityKind { Softmax, Independent };

struct ProbabilityMap {
  Tensor probs;  // [classes, H, W]
  ProbabilityKind kind = ProbabilityKind::Independent;

  // Softmax over the class axis of [classes, H, W] or [1, classes, H, W].
  static ProbabilityMap from_logits(const Tensor& logits);
  // Takes values as given; each must lie in [0, 1].
  static ProbabilityMap independent(Tensor probs);

  std::size_t classes() const { return probs.dim(0); }
  std::size_t height() const { return probs.dim(1); }
  std::size_t width() const { return probs.dim(2); }
};

// One-hot encoding of a ClassMask. Void pixels are all-zero and marked
// invalid; every loss skips them.
struct OneHotTarget {
  Tensor onehot;              // [classes, H, W]
  std::vector<std::uint8_t> valid;  // per pixel
  ClassMask source;

  static OneHotTarget from_mask(const ClassMask& mask);
  // Single-class binary target from 0/1 values ([H, W] or [1, H, W]).
  static OneHotTarget binary(const Tensor& mask);

  std::size_t classes() const { return onehot.dim(0); }
  std::size_t plane() const { return valid.size(); }
};

// theta = 1 + eps1 * [some 4-neighbour has another label] + eps2 * [label is background].
Tensor boundary_weights(const ClassMask& gt, double eps1, double eps2, std::int32_t background_class);

double weighted_cross_entropy(const ProbabilityMap& probs, const OneHotTarget& gt, const Tensor& weights,
                              WceReduction reduction = WceReduction::Sum);
// d/dP of the above.
Tensor weighted_cross_entropy_grad(const ProbabilityMap& probs, const OneHotTarget& gt, const Tensor& weights,
                                   WceReduction reduction = WceReduction::Sum);

// Softmaxes the logits, then sums the smoothed per-class Dice terms.
double dice_loss(const Tensor& logits, const OneHotTarget& gt, double alpha);
double dice_loss_probs(const ProbabilityMap& probs, const OneHotTarget& gt, double alpha);
// d/dA where A is the softmaxed map.
Tensor dice_loss_grad_probs(const ProbabilityMap& probs, const OneHotTarget& gt, double alpha);

// Mean over classes of one-vs-rest 1 - I/U. Classes with an empty union
// contribute zero but still count in the mean.
double iou_loss(const ProbabilityMap& probs, const OneHotTarget& gt);
// Piecewise form: -1/U on foreground pixels, I/U^2 elsewhere.
Tensor iou_loss_grad(const ProbabilityMap& probs, const OneHotTarget& gt);
// General quotient form, -(G*U - I*(1 - G)) / U^2; kept to cross-check the above.
Tensor iou_loss_grad_quotient(const ProbabilityMap& probs, const OneHotTarget& gt);

struct LossComponents {
  double iou = 0.0;
  double dice = 0.0;
  double wce = 0.0;
};

struct LossValue {
  double total = 0.0;
  LossComponents components;
};

LossValue combine(const LossComponents& c, const CompoundLossConfig& config);

// logits [classes, H, W] or [1, classes, H, W].
LossValue compound_loss(const Tensor& logits, const ClassMask& gt, const CompoundLossConfig& config);

struct LossWithGrad {
  LossValue value;   // batch means
  Tensor grad_logits;  // same shape as the logits
};

// logits [n, classes, H, W]; one mask per sample. Returns the batch mean and
// its gradient with respect to the logits.
LossWithGrad compound_loss_with_grad(const Tensor& logits, std::span<const ClassMask> gts,
                                     const CompoundLossConfig& config);
LossValue compound_loss_batch(const Tensor& logits, std::span<const ClassMask> gts,
                              const CompoundLossConfig& config);

}  // namespace msaunet
