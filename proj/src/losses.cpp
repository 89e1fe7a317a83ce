#include "msaunet/losses.hpp"

#include <algorithm>
#include <cmath>

#include "msaunet/errors.hpp"

namespace msaunet {
namespace {

constexpr double kLogFloor = 1e-12;
constexpr double kEmptyUnion = 1e-12;

Tensor as_class_maps(const Tensor& t, const char* what) {
  if (t.rank() == 3) return t;
  if (t.rank() == 4 && t.batch() == 1) return Tensor({t.dim(1), t.dim(2), t.dim(3)}, t.values());
  throw ShapeError(std::string(what) + ": expected [classes, H, W], got " + shape_string(t.shape()));
}

void check_pair(const ProbabilityMap& p, const OneHotTarget& g, const char* what) {
  if (p.probs.shape() != g.onehot.shape()) {
    throw ShapeError(std::string(what) + ": probabilities " + shape_string(p.probs.shape()) +
                     " do not match target " + shape_string(g.onehot.shape()));
  }
}

void check_weights(const ProbabilityMap& p, const Tensor& w) {
  if (w.rank() != 2 || w.dim(0) != p.height() || w.dim(1) != p.width()) {
    throw ShapeError("weighted_cross_entropy: weight map " + shape_string(w.shape()) + " does not match " +
                     std::to_string(p.height()) + "x" + std::to_string(p.width()));
  }
}

std::size_t valid_count(const OneHotTarget& g) {
  return static_cast<std::size_t>(std::count(g.valid.begin(), g.valid.end(), std::uint8_t{1}));
}

struct OverlapSums {
  double inter = 0.0;
  double uni = 0.0;
};

OverlapSums overlap(const double* p, const double* g, const std::uint8_t* valid, std::size_t plane) {
  OverlapSums s;
  for (std::size_t i = 0; i < plane; ++i) {
    if (!valid[i]) continue;
    s.inter += p[i] * g[i];
    s.uni += p[i] + g[i] - p[i] * g[i];
  }
  return s;
}

}  // namespace

void CompoundLossConfig::validate() const {
  if (!(w_iou >= 0.0) || !(w_dice >= 0.0) || !(w_wce >= 0.0)) {
    throw InvalidSpecError("loss weights must be >= 0");
  }
  if (!(dice_alpha > 0.0)) throw InvalidSpecError("dice_alpha must be > 0");
  if (!(eps1 >= 0.0) || !(eps2 >= 0.0)) throw InvalidSpecError("eps1 and eps2 must be >= 0");
}

ProbabilityMap ProbabilityMap::from_logits(const Tensor& logits) {
  Tensor z = as_class_maps(logits, "softmax");
  const std::size_t classes = z.dim(0), plane = z.dim(1) * z.dim(2);
  ProbabilityMap m;
  m.kind = ProbabilityKind::Softmax;
  m.probs = Tensor(z.shape());
  for (std::size_t i = 0; i < plane; ++i) {
    double top = z[i];
    for (std::size_t c = 1; c < classes; ++c) top = std::max(top, z[c * plane + i]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double e = std::exp(z[c * plane + i] - top);
      m.probs[c * plane + i] = e;
      sum += e;
    }
    for (std::size_t c = 0; c < classes; ++c) m.probs[c * plane + i] /= sum;
  }
  return m;
}

ProbabilityMap ProbabilityMap::independent(Tensor probs) {
  Tensor p = as_class_maps(probs, "ProbabilityMap");
  for (double v : p.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidSpecError("ProbabilityMap: value outside [0, 1]");
  }
  return {std::move(p), ProbabilityKind::Independent};
}

OneHotTarget OneHotTarget::from_mask(const ClassMask& mask) {
  if (mask.num_classes < 1) throw InvalidSpecError("OneHotTarget: mask has no classes");
  OneHotTarget t;
  t.source = mask;
  const std::size_t plane = mask.size();
  t.onehot = Tensor({mask.num_classes, mask.height, mask.width});
  t.valid.assign(plane, 0);
  for (std::size_t i = 0; i < plane; ++i) {
    if (mask.is_void(i)) continue;
    t.valid[i] = 1;
    t.onehot[static_cast<std::size_t>(mask.labels[i]) * plane + i] = 1.0;
  }
  return t;
}

OneHotTarget OneHotTarget::binary(const Tensor& mask) {
  Tensor m = mask.rank() == 2 ? Tensor({1, mask.dim(0), mask.dim(1)}, mask.values()) : as_class_maps(mask, "binary");
  if (m.dim(0) != 1) throw ShapeError("OneHotTarget::binary: expected a single class map");
  OneHotTarget t;
  t.source = ClassMask(m.dim(1), m.dim(2), 2);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0.0 && m[i] != 1.0) throw LabelError("OneHotTarget::binary: values must be 0 or 1");
    t.source.labels[i] = m[i] == 1.0 ? 1 : 0;
  }
  t.onehot = std::move(m);
  t.valid.assign(t.onehot.size(), 1);
  return t;
}

Tensor boundary_weights(const ClassMask& gt, double eps1, double eps2, std::int32_t background_class) {
  const std::size_t h = gt.height, w = gt.width;
  Tensor theta({h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::int32_t label = gt.at(y, x);
      const bool edge = (y > 0 && gt.at(y - 1, x) != label) || (y + 1 < h && gt.at(y + 1, x) != label) ||
                        (x > 0 && gt.at(y, x - 1) != label) || (x + 1 < w && gt.at(y, x + 1) != label);
      theta[y * w + x] = 1.0 + (edge ? eps1 : 0.0) + (label == background_class ? eps2 : 0.0);
    }
  }
  return theta;
}

double weighted_cross_entropy(const ProbabilityMap& probs, const OneHotTarget& gt, const Tensor& weights,
                              WceReduction reduction) {
  check_pair(probs, gt, "weighted_cross_entropy");
  check_weights(probs, weights);
  const std::size_t plane = gt.plane();
  double loss = 0.0;
  for (std::size_t c = 0; c < probs.classes(); ++c) {
    const double* p = probs.probs.data() + c * plane;
    const double* g = gt.onehot.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (gt.valid[i] && g[i] != 0.0) loss -= weights[i] * g[i] * std::log(std::max(p[i], kLogFloor));
    }
  }
  if (reduction == WceReduction::Mean) {
    const std::size_t n = valid_count(gt);
    return n == 0 ? 0.0 : loss / static_cast<double>(n);
  }
  return loss;
}

Tensor weighted_cross_entropy_grad(const ProbabilityMap& probs, const OneHotTarget& gt, const Tensor& weights,
                                   WceReduction reduction) {
  check_pair(probs, gt, "weighted_cross_entropy_grad");
  check_weights(probs, weights);
  const std::size_t plane = gt.plane();
  double scale = 1.0;
  if (reduction == WceReduction::Mean) {
    const std::size_t n = valid_count(gt);
    scale = n == 0 ? 0.0 : 1.0 / static_cast<double>(n);
  }
  Tensor grad(probs.probs.shape());
  for (std::size_t c = 0; c < probs.classes(); ++c) {
    const double* p = probs.probs.data() + c * plane;
    const double* g = gt.onehot.data() + c * plane;
    double* d = grad.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      // The clamp is flat below the floor.
      if (gt.valid[i] && g[i] != 0.0 && p[i] > kLogFloor) d[i] = -scale * weights[i] * g[i] / p[i];
    }
  }
  return grad;
}

double dice_loss(const Tensor& logits, const OneHotTarget& gt, double alpha) {
  return dice_loss_probs(ProbabilityMap::from_logits(logits), gt, alpha);
}

double dice_loss_probs(const ProbabilityMap& probs, const OneHotTarget& gt, double alpha) {
  check_pair(probs, gt, "dice_loss");
  if (!(alpha > 0.0)) throw InvalidSpecError("dice_loss: alpha must be > 0");
  const std::size_t plane = gt.plane();
  double loss = 0.0;
  for (std::size_t c = 0; c < probs.classes(); ++c) {
    const double* a = probs.probs.data() + c * plane;
    const double* g = gt.onehot.data() + c * plane;
    double overlap_sum = 0.0, squares = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      if (!gt.valid[i]) continue;
      overlap_sum += g[i] * a[i];
      squares += g[i] * g[i] + a[i] * a[i];
    }
    loss += 1.0 - (2.0 * overlap_sum + alpha) / (squares + alpha);
  }
  return loss;
}

Tensor dice_loss_grad_probs(const ProbabilityMap& probs, const OneHotTarget& gt, double alpha) {
  check_pair(probs, gt, "dice_loss_grad");
  const std::size_t plane = gt.plane();
  Tensor grad(probs.probs.shape());
  for (std::size_t c = 0; c < probs.classes(); ++c) {
    const double* a = probs.probs.data() + c * plane;
    const double* g = gt.onehot.data() + c * plane;
    double overlap_sum = 0.0, squares = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      if (!gt.valid[i]) continue;
      overlap_sum += g[i] * a[i];
      squares += g[i] * g[i] + a[i] * a[i];
    }
    const double num = 2.0 * overlap_sum + alpha, den = squares + alpha;
    double* d = grad.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (gt.valid[i]) d[i] = -(2.0 * g[i] * den - num * 2.0 * a[i]) / (den * den);
    }
  }
  return grad;
}

double iou_loss(const ProbabilityMap& probs, const OneHotTarget& gt) {
  check_pair(probs, gt, "iou_loss");
  const std::size_t plane = gt.plane(), classes = probs.classes();
  double loss = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto s = overlap(probs.probs.data() + c * plane, gt.onehot.data() + c * plane, gt.valid.data(), plane);
    if (s.uni >= kEmptyUnion) loss += 1.0 - s.inter / s.uni;
  }
  return loss / static_cast<double>(classes);
}

Tensor iou_loss_grad(const ProbabilityMap& probs, const OneHotTarget& gt) {
  check_pair(probs, gt, "iou_loss_grad");
  const std::size_t plane = gt.plane(), classes = probs.classes();
  const double inv_n = 1.0 / static_cast<double>(classes);
  Tensor grad(probs.probs.shape());
  for (std::size_t c = 0; c < classes; ++c) {
    const double* g = gt.onehot.data() + c * plane;
    const auto s = overlap(probs.probs.data() + c * plane, g, gt.valid.data(), plane);
    if (s.uni < kEmptyUnion) continue;
    const double fg = -inv_n / s.uni;
    const double bg = inv_n * s.inter / (s.uni * s.uni);
    double* d = grad.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (gt.valid[i]) d[i] = g[i] == 1.0 ? fg : bg;
    }
  }
  return grad;
}

Tensor iou_loss_grad_quotient(const ProbabilityMap& probs, const OneHotTarget& gt) {
  check_pair(probs, gt, "iou_loss_grad_quotient");
  const std::size_t plane = gt.plane(), classes = probs.classes();
  Tensor grad(probs.probs.shape());
  for (std::size_t c = 0; c < classes; ++c) {
    const double* g = gt.onehot.data() + c * plane;
    const auto s = overlap(probs.probs.data() + c * plane, g, gt.valid.data(), plane);
    if (s.uni < kEmptyUnion) continue;
    double* d = grad.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (!gt.valid[i]) continue;
      // dI/dp = g, dU/dp = 1 - g.
      d[i] = -(g[i] * s.uni - s.inter * (1.0 - g[i])) / (s.uni * s.uni) / static_cast<double>(classes);
    }
  }
  return grad;
}

LossValue combine(const LossComponents& c, const CompoundLossConfig& config) {
  return {config.w_iou * c.iou + config.w_dice * c.dice + config.w_wce * c.wce, c};
}

namespace {

struct ImageLoss {
  LossComponents components;
  ProbabilityMap probs;
  Tensor grad_probs;
};

ImageLoss image_loss(const Tensor& logits, const ClassMask& gt, const CompoundLossConfig& config, bool with_grad) {
  ImageLoss r;
  r.probs = ProbabilityMap::from_logits(logits);
  if (gt.num_classes != r.probs.classes() || gt.height != r.probs.height() || gt.width != r.probs.width()) {
    throw ShapeError("compound_loss: mask " + std::to_string(gt.height) + "x" + std::to_string(gt.width) + " with " +
                     std::to_string(gt.num_classes) + " classes does not match logits " +
                     shape_string(r.probs.probs.shape()));
  }
  const OneHotTarget target = OneHotTarget::from_mask(gt);
  const Tensor theta = boundary_weights(gt, config.eps1, config.eps2, config.background_class);
  r.components.iou = iou_loss(r.probs, target);
  r.components.dice = dice_loss_probs(r.probs, target, config.dice_alpha);
  r.components.wce = weighted_cross_entropy(r.probs, target, theta, config.wce_reduction);
  if (with_grad) {
    r.grad_probs = Tensor(r.probs.probs.shape());
    const Tensor gi = iou_loss_grad(r.probs, target);
    const Tensor gd = dice_loss_grad_probs(r.probs, target, config.dice_alpha);
    const Tensor gw = weighted_cross_entropy_grad(r.probs, target, theta, config.wce_reduction);
    for (std::size_t i = 0; i < gi.size(); ++i) {
      r.grad_probs[i] = config.w_iou * gi[i] + config.w_dice * gd[i] + config.w_wce * gw[i];
    }
  }
  return r;
}

void check_batch(const Tensor& logits, std::span<const ClassMask> gts) {
  if (logits.rank() != 4) throw ShapeError("compound_loss: logits must be [n, classes, H, W]");
  if (logits.batch() != gts.size()) {
    throw ShapeError("compound_loss: " + std::to_string(logits.batch()) + " logit maps but " +
                     std::to_string(gts.size()) + " masks");
  }
  if (gts.empty()) throw ShapeError("compound_loss: empty batch");
}

}  // namespace

LossValue compound_loss(const Tensor& logits, const ClassMask& gt, const CompoundLossConfig& config) {
  return combine(image_loss(logits, gt, config, false).components, config);
}

LossValue compound_loss_batch(const Tensor& logits, std::span<const ClassMask> gts,
                              const CompoundLossConfig& config) {
  check_batch(logits, gts);
  LossComponents mean;
  const double inv = 1.0 / static_cast<double>(gts.size());
  for (std::size_t b = 0; b < gts.size(); ++b) {
    const auto c = image_loss(logits.sample(b), gts[b], config, false).components;
    mean.iou += c.iou * inv;
    mean.dice += c.dice * inv;
    mean.wce += c.wce * inv;
  }
  return combine(mean, config);
}

LossWithGrad compound_loss_with_grad(const Tensor& logits, std::span<const ClassMask> gts,
                                     const CompoundLossConfig& config) {
  check_batch(logits, gts);
  LossWithGrad out;
  out.grad_logits = Tensor(logits.shape());
  LossComponents mean;
  const double inv = 1.0 / static_cast<double>(gts.size());
  const std::size_t classes = logits.channels(), plane = logits.plane();
  for (std::size_t b = 0; b < gts.size(); ++b) {
    const ImageLoss r = image_loss(logits.sample(b), gts[b], config, true);
    mean.iou += r.components.iou * inv;
    mean.dice += r.components.dice * inv;
    mean.wce += r.components.wce * inv;
    // Softmax Jacobian-vector product: dz = P * (dP - sum_c P dP).
    const double* p = r.probs.probs.data();
    const double* dp = r.grad_probs.data();
    double* dz = out.grad_logits.data() + b * classes * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < classes; ++c) dot += p[c * plane + i] * dp[c * plane + i];
      for (std::size_t c = 0; c < classes; ++c) {
        dz[c * plane + i] = inv * p[c * plane + i] * (dp[c * plane + i] - dot);
      }
    }
  }
  out.value = combine(mean, config);
  return out;
}

}  // namespace msaunet
