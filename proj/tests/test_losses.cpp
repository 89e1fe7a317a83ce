#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "msaunet/errors.hpp"
#include "msaunet/losses.hpp"
#include "support.hpp"

using namespace msaunet;

namespace {

ClassMask mask_from(std::size_t h, std::size_t w, std::size_t classes, std::vector<std::int32_t> labels) {
  ClassMask m(h, w, classes);
  m.labels = std::move(labels);
  return m;
}

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, 1, n}, std::move(v));
}

// Central differences of iou_loss on independent probabilities.
double iou_fd(const Tensor& probs, const OneHotTarget& gt, std::size_t i, double h = 1e-6) {
  Tensor up = probs, down = probs;
  up[i] += h;
  down[i] -= h;
  return (iou_loss(ProbabilityMap::independent(up), gt) - iou_loss(ProbabilityMap::independent(down), gt)) / (2 * h);
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("boundary weights") {
    // 2x2 foreground square in the top-left corner of a 4x4 mask.
    const ClassMask gt = mask_from(4, 4, 2, {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    const Tensor theta = boundary_weights(gt, 1.0, 0.0, 0);
    std::size_t twos = 0;
    for (std::size_t y = 0; y < 4; ++y) {
      for (std::size_t x = 0; x < 4; ++x) {
        bool edge = false;
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = static_cast<int>(y) + dy[k], nx = static_cast<int>(x) + dx[k];
          if (ny < 0 || nx < 0 || ny >= 4 || nx >= 4) continue;
          edge |= gt.at(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx)) != gt.at(y, x);
        }
        CHECK(theta[y * 4 + x] == (edge ? 2.0 : 1.0));
        twos += edge;
      }
    }
    CHECK(twos == 7);  // corner pixel (0,0) sees only foreground
    const Tensor both = boundary_weights(gt, 1.0, 1.0, 0);
    CHECK(both[2] == 3.0);   // background next to foreground
    CHECK(both[15] == 2.0);  // interior background
  }

  TEST_CASE("boundary weights on a centred square mark 12 pixels") {
    const ClassMask gt = mask_from(4, 4, 2, {0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0});
    const Tensor theta = boundary_weights(gt, 1.0, 0.0, 0);
    CHECK(std::count(theta.values().begin(), theta.values().end(), 2.0) == 12);
    CHECK(std::count(theta.values().begin(), theta.values().end(), 1.0) == 4);
    // Interior foreground pixel of a larger square has theta 1.
    ClassMask big(5, 5, 2, 1);
    CHECK(boundary_weights(big, 1.0, 1.0, 0)[12] == 1.0);
  }

  TEST_CASE("weighted cross-entropy") {
    const ProbabilityMap half = ProbabilityMap::independent(Tensor({2, 1, 1}, {0.5, 0.5}));
    const OneHotTarget gt = OneHotTarget::from_mask(mask_from(1, 1, 2, {0}));
    const Tensor ones({1, 1}, 1.0);
    CHECK(weighted_cross_entropy(half, gt, ones) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(weighted_cross_entropy(half, gt, Tensor({1, 1}, 2.0)) ==
          doctest::Approx(2 * std::log(2.0)).epsilon(1e-15));

    const ProbabilityMap perfect = ProbabilityMap::independent(Tensor({2, 1, 1}, {1.0, 0.0}));
    CHECK(weighted_cross_entropy(perfect, gt, ones) == 0.0);
    // Confident wrong prediction hits the clamp instead of diverging.
    const ProbabilityMap wrong = ProbabilityMap::independent(Tensor({2, 1, 1}, {0.0, 1.0}));
    CHECK(weighted_cross_entropy(wrong, gt, ones) == doctest::Approx(-std::log(1e-12)));

    std::mt19937_64 rng(3);
    const ClassMask m = testing::random_mask(5, 6, 3, rng);
    const OneHotTarget t = OneHotTarget::from_mask(m);
    const auto probs = ProbabilityMap::from_logits(testing::random_tensor({3, 5, 6}, rng, -2, 2));
    const Tensor w = boundary_weights(m, 1.0, 1.0, 0);
    Tensor doubled = w;
    doubled *= 2.0;
    const double sum = weighted_cross_entropy(probs, t, w, WceReduction::Sum);
    CHECK(weighted_cross_entropy(probs, t, doubled, WceReduction::Sum) == doctest::Approx(2 * sum).epsilon(1e-14));
    CHECK(weighted_cross_entropy(probs, t, w, WceReduction::Mean) == doctest::Approx(sum / 30).epsilon(1e-14));

    const Tensor g = weighted_cross_entropy_grad(probs, t, w, WceReduction::Sum);
    for (std::size_t i = 0; i < g.size(); ++i) {
      Tensor up = probs.probs, down = probs.probs;
      up[i] += 1e-7;
      down[i] -= 1e-7;
      const double fd = (weighted_cross_entropy(ProbabilityMap::independent(up), t, w) -
                         weighted_cross_entropy(ProbabilityMap::independent(down), t, w)) /
                        2e-7;
      CHECK(testing::rel_error(g[i], fd, 1e-6) < 1e-5);
    }
    CHECK_THROWS_AS(weighted_cross_entropy(probs, t, Tensor({5, 5}, 1.0)), ShapeError);
  }

  TEST_CASE("dice loss") {
    const OneHotTarget gt = OneHotTarget::binary(row({1, 1, 1, 1, 0, 0, 0, 0}));
    const auto miss = ProbabilityMap::independent(row({0, 0, 0, 0, 1, 1, 1, 1}));
    CHECK(dice_loss_probs(miss, gt, 1.0) == doctest::Approx(8.0 / 9.0).epsilon(1e-15));
    const auto hit = ProbabilityMap::independent(row({1, 1, 1, 1, 0, 0, 0, 0}));
    CHECK(dice_loss_probs(hit, gt, 1.0) == 0.0);
    CHECK(dice_loss_probs(miss, gt, 1e12) < 1e-10);

    // Softmax of strongly separated logits approaches the one-hot target.
    const ClassMask m = mask_from(1, 3, 2, {0, 1, 1});
    Tensor logits({2, 1, 3}, {50, -50, -50, -50, 50, 50});
    CHECK(dice_loss(logits, OneHotTarget::from_mask(m), 1.0) < 1e-12);

    std::mt19937_64 rng(5);
    const OneHotTarget t = OneHotTarget::from_mask(testing::random_mask(4, 4, 3, rng));
    const auto probs = ProbabilityMap::from_logits(testing::random_tensor({3, 4, 4}, rng));
    const Tensor g = dice_loss_grad_probs(probs, t, 1.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      Tensor up = probs.probs, down = probs.probs;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double fd =
          (dice_loss_probs(ProbabilityMap::independent(up), t, 1.0) -
           dice_loss_probs(ProbabilityMap::independent(down), t, 1.0)) / 2e-6;
      CHECK(testing::rel_error(g[i], fd, 1e-6) < 1e-5);
    }
  }

  TEST_CASE("soft IoU hand example and gradient branches") {
    const auto probs = ProbabilityMap::independent(row({0.5, 0.5}));
    const OneHotTarget gt = OneHotTarget::binary(row({1, 0}));
    CHECK(iou_loss(probs, gt) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    const Tensor g = iou_loss_grad(probs, gt);
    CHECK(g[0] == doctest::Approx(-1.0 / 1.5).epsilon(1e-15));
    CHECK(g[1] == doctest::Approx(0.5 / 2.25).epsilon(1e-15));
    const Tensor q = iou_loss_grad_quotient(probs, gt);
    CHECK(std::abs(q[0] - g[0]) < 1e-15);
    CHECK(std::abs(q[1] - g[1]) < 1e-15);

    const auto exact = ProbabilityMap::independent(row({1, 1, 1, 0}));
    const OneHotTarget target = OneHotTarget::binary(row({1, 1, 1, 0}));
    CHECK(iou_loss(exact, target) == 0.0);
    CHECK(iou_loss_grad(exact, target)[0] == doctest::Approx(-1.0 / 3.0));
    CHECK(iou_loss(ProbabilityMap::independent(row({0, 0, 0, 0})), target) == 1.0);

    // Empty union: zero loss and zero gradient.
    const OneHotTarget empty = OneHotTarget::binary(row({0, 0}));
    const auto zero = ProbabilityMap::independent(row({0, 0}));
    CHECK(iou_loss(zero, empty) == 0.0);
    const Tensor none = iou_loss_grad(zero, empty);
    for (double v : none.values()) CHECK(v == 0.0);
  }

  TEST_CASE("soft IoU gradient matches finite differences on 20 random maps") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor p = testing::random_tensor({1, 8, 8}, rng, 0.01, 0.99);
      Tensor g({8, 8});
      for (auto& v : g.values()) v = static_cast<double>(rng() % 2);
      g[0] = 1.0;
      const OneHotTarget gt = OneHotTarget::binary(g);
      const auto probs = ProbabilityMap::independent(p);
      const Tensor grad = iou_loss_grad(probs, gt);
      const Tensor quotient = iou_loss_grad_quotient(probs, gt);
      for (std::size_t i = 0; i < 64; ++i) {
        CHECK(testing::rel_error(grad[i], iou_fd(p, gt, i), 1e-8) < 1e-4);
        CHECK(std::abs(grad[i] - quotient[i]) < 1e-12);
      }
    }
  }

  TEST_CASE("multi-class IoU averages one-vs-rest terms") {
    std::mt19937_64 rng(9);
    const ClassMask m = testing::random_mask(6, 6, 4, rng);
    const OneHotTarget t = OneHotTarget::from_mask(m);
    const auto probs = ProbabilityMap::from_logits(testing::random_tensor({4, 6, 6}, rng));
    double mean = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      Tensor pc({1, 6, 6}), gc({6, 6});
      for (std::size_t i = 0; i < 36; ++i) {
        pc[i] = probs.probs[c * 36 + i];
        gc[i] = t.onehot[c * 36 + i];
      }
      mean += iou_loss(ProbabilityMap::independent(pc), OneHotTarget::binary(gc)) / 4.0;
    }
    CHECK(iou_loss(probs, t) == doctest::Approx(mean).epsilon(1e-14));
    const Tensor g = iou_loss_grad(probs, t);
    for (std::size_t i = 0; i < g.size(); i += 7) {
      Tensor up = probs.probs, down = probs.probs;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double fd = (iou_loss(ProbabilityMap::independent(up), t) -
                         iou_loss(ProbabilityMap::independent(down), t)) / 2e-6;
      CHECK(testing::rel_error(g[i], fd, 1e-8) < 1e-4);
    }
  }

  TEST_CASE("compound loss arithmetic, degenerate weights and linearity") {
    const CompoundLossConfig cfg;
    CHECK(combine({0.6, 0.5, 0.2}, cfg).total == doctest::Approx(0.765).epsilon(1e-15));

    std::mt19937_64 rng(11);
    const ClassMask m = testing::random_mask(8, 8, 3, rng);
    const Tensor logits = testing::random_tensor({3, 8, 8}, rng, -3, 3);
    const LossValue base = compound_loss(logits, m, cfg);
    const auto probs = ProbabilityMap::from_logits(logits);
    const OneHotTarget t = OneHotTarget::from_mask(m);
    CHECK(base.components.iou == doctest::Approx(iou_loss(probs, t)).epsilon(1e-14));
    CHECK(base.components.dice == doctest::Approx(dice_loss(logits, t, 1.0)).epsilon(1e-14));

    CompoundLossConfig iou_only = cfg;
    iou_only.w_dice = iou_only.w_wce = 0.0;
    CHECK(compound_loss(logits, m, iou_only).total == base.components.iou);

    CompoundLossConfig scaled = cfg;
    scaled.w_iou = 2.5;
    scaled.w_dice = 0.3;
    scaled.w_wce = 4.0;
    const auto& c = base.components;
    CHECK(compound_loss(logits, m, scaled).total ==
          doctest::Approx(2.5 * c.iou + 0.3 * c.dice + 4.0 * c.wce).epsilon(1e-14));

    Tensor perfect({3, 8, 8}, -60.0);
    for (std::size_t i = 0; i < 64; ++i) perfect[static_cast<std::size_t>(m.labels[i]) * 64 + i] = 60.0;
    const LossValue zero = compound_loss(perfect, m, cfg);
    CHECK(zero.total < 1e-12);
  }

  TEST_CASE("dice and IoU are invariant under a shared pixel permutation") {
    std::mt19937_64 rng(13);
    const ClassMask m = testing::random_mask(5, 5, 3, rng);
    const Tensor logits = testing::random_tensor({3, 5, 5}, rng);
    std::vector<std::size_t> perm(25);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ClassMask pm = m;
    Tensor pl = logits;
    for (std::size_t i = 0; i < 25; ++i) {
      pm.labels[perm[i]] = m.labels[i];
      for (std::size_t c = 0; c < 3; ++c) pl[c * 25 + perm[i]] = logits[c * 25 + i];
    }
    const auto a = OneHotTarget::from_mask(m), b = OneHotTarget::from_mask(pm);
    CHECK(dice_loss(logits, a, 1.0) == doctest::Approx(dice_loss(pl, b, 1.0)).epsilon(1e-14));
    CHECK(iou_loss(ProbabilityMap::from_logits(logits), a) ==
          doctest::Approx(iou_loss(ProbabilityMap::from_logits(pl), b)).epsilon(1e-14));
  }

  TEST_CASE("batched loss gradient matches finite differences, void pixels ignored") {
    std::mt19937_64 rng(17);
    const Tensor logits = testing::random_tensor({2, 3, 4, 4}, rng, -2, 2);
    std::vector<ClassMask> gts{testing::random_mask(4, 4, 3, rng), testing::random_mask(4, 4, 3, rng)};
    gts[1].labels[5] = 255;
    const CompoundLossConfig cfg;
    const LossWithGrad lg = compound_loss_with_grad(logits, gts, cfg);
    CHECK(lg.value.total == doctest::Approx(compound_loss_batch(logits, gts, cfg).total).epsilon(1e-14));
    for (std::size_t i = 0; i < logits.size(); ++i) {
      Tensor up = logits, down = logits;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double fd =
          (compound_loss_batch(up, gts, cfg).total - compound_loss_batch(down, gts, cfg).total) / 2e-6;
      CHECK(testing::rel_error(lg.grad_logits[i], fd, 1e-6) < 1e-5);
    }
    // A void pixel's logits do not move the loss.
    for (std::size_t c = 0; c < 3; ++c) CHECK(lg.grad_logits[((1 * 3 + c) * 4 + 1) * 4 + 1] == 0.0);
  }

  TEST_CASE("construction and config errors") {
    CHECK_THROWS(ProbabilityMap::independent(row({0.5, 1.5})));
    CHECK_THROWS(OneHotTarget::binary(row({0, 2})));
    CompoundLossConfig bad;
    bad.dice_alpha = 0.0;
    CHECK_THROWS(bad.validate());
    bad = {};
    bad.w_wce = -1.0;
    CHECK_THROWS(bad.validate());
    const auto probs = ProbabilityMap::independent(row({0.5, 0.5}));
    CHECK_THROWS_AS(iou_loss(probs, OneHotTarget::binary(row({1, 0, 0}))), ShapeError);
  }
}
