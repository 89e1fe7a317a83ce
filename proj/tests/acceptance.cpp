// Acceptance checks, one PASS/FAIL line per criterion.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "msaunet/checkpoint.hpp"
#include "msaunet/cli.hpp"
#include "msaunet/image_io.hpp"
#include "msaunet/losses.hpp"
#include "msaunet/metrics.hpp"
#include "msaunet/network.hpp"
#include "msaunet/run_config.hpp"
#include "msaunet/training.hpp"
#include "support.hpp"

using namespace msaunet;
using ag::Var;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects failed conditions; the criterion passes when none were recorded.
struct Checks {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

RunConfig bundled_config() { return load_run_config(MSAUNET_BUNDLED_CONFIG); }

// 1. Soft-IoU gradient against finite differences and the quotient form.
std::string criterion_iou_gradient(Checks& c) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst_fd = 0.0, worst_quotient = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor p = testing::random_tensor({1, 8, 8}, rng, 0.01, 0.99);
    Tensor g({8, 8});
    for (auto& v : g.values()) v = static_cast<double>(rng() & 1u);
    g[trial % 64] = 1.0;
    const OneHotTarget gt = OneHotTarget::binary(g);
    const auto probs = ProbabilityMap::independent(p);
    const Tensor grad = iou_loss_grad(probs, gt);
    const Tensor quotient = iou_loss_grad_quotient(probs, gt);
    for (std::size_t i = 0; i < 64; ++i) {
      Tensor up = p, down = p;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double fd =
          (iou_loss(ProbabilityMap::independent(up), gt) - iou_loss(ProbabilityMap::independent(down), gt)) / 2e-6;
      worst_fd = std::max(worst_fd, testing::rel_error(grad[i], fd, 1e-12));
      worst_quotient = std::max(worst_quotient, std::abs(grad[i] - quotient[i]));
    }
  }
  const double elapsed = seconds_since(t0);
  c.expect(worst_fd < 1e-4, "finite-difference error " + fmt("%.3g", worst_fd));
  c.expect(worst_quotient < 1e-12, "quotient form differs by " + fmt("%.3g", worst_quotient));
  c.expect(elapsed < 10.0, "took " + fmt("%.1f s", elapsed));
  return "max rel err " + fmt("%.2e", worst_fd) + ", quotient gap " + fmt("%.1e", worst_quotient) + ", " +
         fmt("%.2f s", elapsed);
}

// 2. Whole-network compound-loss gradient on sampled parameters, batch norm frozen.
std::string criterion_network_gradient(Checks& c) {
  const auto t0 = Clock::now();
  MsauNetConfig cfg = bundled_config().train.model;
  cfg.num_classes = 3;
  cfg.input_h = cfg.input_w = 64;
  const MsauNetState model = build_network(cfg, 5);
  std::mt19937_64 rng(202);
  const Tensor image = testing::random_tensor({1, 3, 64, 64}, rng);
  const ClassMask mask = testing::random_mask(64, 64, 3, rng);
  const CompoundLossConfig loss;
  const std::span<const ClassMask> masks(&mask, 1);

  auto params = model.parameters().params;
  for (auto& [name, v] : params) v.zero_grad();
  const Var logits = forward(Var(image), model, nn::Mode::Eval);
  ag::backward(logits, compound_loss_with_grad(logits.value(), masks, loss).grad_logits);

  auto value = [&] {
    ag::NoGradGuard guard;
    return compound_loss_batch(forward(Var(image), model, nn::Mode::Eval).value(), masks, loss).total;
  };
  double worst = 0.0;
  std::string worst_name;
  for (int k = 0; k < 50; ++k) {
    auto& [name, v] = params[rng() % params.size()];
    const std::size_t i = rng() % v.value().size();
    const double analytic = v.grad().empty() ? 0.0 : v.grad()[i];
    const double keep = v.value()[i];
    // ReLU kinks within one step can bend a central difference, so a second,
    // smaller step gets a chance. The 1e-6 floor absorbs the ~1e-10 rounding
    // noise left after differencing.
    double err = std::numeric_limits<double>::infinity();
    for (const double step : {1e-5, 1e-6}) {
      const double h = step * std::max(1.0, std::abs(keep));
      v.value()[i] = keep + h;
      const double up = value();
      v.value()[i] = keep - h;
      const double down = value();
      v.value()[i] = keep;
      err = std::min(err, testing::rel_error(analytic, (up - down) / (2 * h), 1e-6));
    }
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  }
  const double elapsed = seconds_since(t0);
  c.expect(worst < 1e-3, "relative error " + fmt("%.3g", worst) + " at " + worst_name);
  c.expect(elapsed < 300.0, "took " + fmt("%.1f s", elapsed));
  return "50 parameters, max rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f s", elapsed);
}

// 3. Decoder geometry of the DenseNet-shaped network at 224x224.
std::string criterion_shapes(Checks& c) {
  MsauNetConfig cfg;
  cfg.num_classes = 21;
  const MsauNetState model = build_network(cfg, 0);
  Trace trace;
  {
    ag::NoGradGuard guard;
    std::mt19937_64 rng(303);
    const Var out = forward(Var(testing::random_tensor({1, 3, 224, 224}, rng)), model, nn::Mode::Eval, &trace);
    c.expect(out.shape() == Tensor::Shape{1, 21, 224, 224}, "logits " + shape_string(out.shape()));
  }
  const auto* bottleneck = trace.find("encoder", "denseblock4");
  c.expect(bottleneck && bottleneck->shape == Tensor::Shape{1, 2208, 7, 7}, "bottleneck is not 2208x7x7");
  const char* blocks[] = {"msab1", "msab2", "msab3", "ab1", "ab2"};
  const std::size_t sides[] = {14, 28, 56, 112, 224};
  std::string schedule = "2208@7";
  for (std::size_t b = 0; b < 5; ++b) {
    const auto* out = trace.find(blocks[b], "output");
    const std::size_t ch = cfg.decoder_channels[b];
    c.expect(out && out->shape == Tensor::Shape{1, ch, sides[b], sides[b]},
             std::string(blocks[b]) + " output " + (out ? shape_string(out->shape) : "missing"));
    if (b < 3) {
      const auto* pre = trace.find(blocks[b], "prefuse");
      c.expect(pre && pre->shape[1] == 3 * ch, std::string(blocks[b]) + " prefuse is not 3*ch_out");
    }
    if (out) schedule += " -> " + std::to_string(out->shape[1]) + "@" + std::to_string(out->shape[2]);
  }
  const auto* head = trace.find("head", "output");
  c.expect(head && head->shape[1] == 21, "head does not emit N channels");
  return schedule + " -> 21@224, prefuse 3*ch_out";
}

// 4. Attention coefficients stay in (0, 1); the zero gate halves the skip.
std::string criterion_attention(Checks& c) {
  std::mt19937_64 rng(404);
  double lo = 1.0, hi = 0.0;
  std::size_t count = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    nn::InitRng init(static_cast<std::uint64_t>(trial));
    const std::size_t cx = 1 + rng() % 4, cy = 1 + rng() % 4, ct = 1 + rng() % 3;
    auto p = AttentionGateParams::make(cx, cy, ct, init);
    // Scale some gates up so the pre-activation reaches the saturated range.
    const double scale = trial % 10 == 0 ? 1e3 : 1.0;
    const Tensor x = testing::random_tensor({1, cx, 2, 2}, rng, -10 * scale, 10 * scale);
    const Tensor y = testing::random_tensor({1, cy, 4, 4}, rng, -10 * scale, 10 * scale);
    const Tensor beta = attention_forward(Var(x), Var(y), p).attn.value();
    for (double b : beta.values()) {
      lo = std::min(lo, b);
      hi = std::max(hi, b);
      ++count;
    }
  }
  c.expect(lo > 0.0 && hi < 1.0, "coefficient outside (0,1)");

  const auto zero = AttentionGateParams::zeros(3, 5, 2);
  const Tensor skip = testing::random_tensor({2, 5, 8, 8}, rng, -3, 3);
  const auto out = attention_forward(Var(testing::random_tensor({2, 3, 4, 4}, rng)), Var(skip), zero);
  bool exact = true;
  for (double b : out.attn.value().values()) exact &= b == 0.5;
  for (std::size_t i = 0; i < skip.size(); ++i) exact &= out.gated.value()[i] == 0.5 * skip[i];
  c.expect(exact, "zero gate is not exactly 0.5");
  return std::to_string(count) + " coefficients in [" + fmt("%.3g", lo) + ", 1 - " + fmt("%.3g", 1.0 - hi) +
         "], zero gate exact";
}

// 5. Metrics against a brute-force per-pixel oracle; merge homomorphism.
std::string criterion_metrics(Checks& c) {
  constexpr std::size_t kClasses = 4;
  std::mt19937_64 rng(505);
  double worst = 0.0;
  std::vector<std::pair<ClassMask, ClassMask>> pairs;
  for (int trial = 0; trial < 100; ++trial) {
    ClassMask pred = testing::random_mask(16, 16, kClasses, rng);
    ClassMask gt = testing::random_mask(16, 16, kClasses, rng);
    // Skew some pairs so classes go missing from one side or both.
    if (trial % 4 == 1) {
      for (auto& l : gt.labels) l = l % 2;
    }
    if (trial % 4 == 2) {
      for (auto& l : pred.labels) l = l == 3 ? 0 : l;
      for (auto& l : gt.labels) l = l == 3 ? 1 : l;
    }
    ConfusionMatrix cm(kClasses);
    cm.accumulate(pred, gt);
    const MetricsReport r = MetricsReport::from(cm);

    double correct = 0.0, miou = 0.0, fw = 0.0, dice = 0.0, present = 0.0;
    const double total = static_cast<double>(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) correct += pred.labels[i] == gt.labels[i];
    for (std::size_t n = 0; n < kClasses; ++n) {
      double tp = 0, fp = 0, fn = 0, freq = 0;
      for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool p = pred.labels[i] == static_cast<std::int32_t>(n);
        const bool g = gt.labels[i] == static_cast<std::int32_t>(n);
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
        freq += g;
      }
      if (tp + fp + fn == 0) continue;
      present += 1;
      const double iou = tp / (tp + fp + fn);
      miou += iou;
      fw += freq * iou;
      dice += 2 * tp / (2 * tp + fp + fn);
    }
    const double expect[4] = {correct / total, miou / present, fw / total, dice / present};
    const double got[4] = {r.pixel_accuracy, r.mean_iou, r.fw_iou, r.dice};
    for (int k = 0; k < 4; ++k) worst = std::max(worst, std::abs(expect[k] - got[k]));
    pairs.emplace_back(std::move(pred), std::move(gt));
  }
  c.expect(worst < 1e-9, "oracle gap " + fmt("%.3g", worst));

  bool homomorphic = true;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t parts = 2 + rng() % 4;
    std::vector<ConfusionMatrix> shards(parts, ConfusionMatrix(kClasses));
    ConfusionMatrix whole(kClasses);
    for (const auto& [pred, gt] : pairs) {
      whole.accumulate(pred, gt);
      shards[rng() % parts].accumulate(pred, gt);
    }
    ConfusionMatrix merged(kClasses);
    for (const auto& s : shards) merged.merge(s);
    homomorphic &= merged == whole && MetricsReport::from(merged).csv_row() == MetricsReport::from(whole).csv_row();
  }
  c.expect(homomorphic, "merged partitions disagree with the whole");
  return "100 pairs, max gap " + fmt("%.1e", worst) + ", 20 random partitions merge exactly";
}

// 6. Loss identities.
std::string criterion_loss_identities(Checks& c) {
  std::mt19937_64 rng(606);
  const ClassMask m = testing::random_mask(8, 8, 3, rng);
  const OneHotTarget t = OneHotTarget::from_mask(m);
  const auto exact = ProbabilityMap::independent(t.onehot);
  const Tensor theta = boundary_weights(m, 1.0, 1.0, 0);
  const double li = iou_loss(exact, t), ld = dice_loss_probs(exact, t, 1.0),
               lw = weighted_cross_entropy(exact, t, theta);
  c.expect(li == 0.0 && ld == 0.0 && lw == 0.0, "perfect prediction is not zero loss");
  Tensor logits({3, 8, 8}, -40.0);
  for (std::size_t i = 0; i < 64; ++i) logits[static_cast<std::size_t>(m.labels[i]) * 64 + i] = 40.0;
  c.expect(compound_loss(logits, m, {}).total < 1e-12, "saturated logits leave a residual loss");

  const CompoundLossConfig paper;
  c.expect(paper.w_iou == 1.0 && paper.w_dice == 0.01 && paper.w_wce == 0.8, "default weights");
  const LossValue v = compound_loss(testing::random_tensor({3, 8, 8}, rng, -2, 2), m, paper);
  const auto& k = v.components;
  c.expect(v.total == 1.0 * k.iou + 0.01 * k.dice + 0.8 * k.wce, "total is not the weighted sum");
  c.expect(combine({0.6, 0.5, 0.2}, paper).total == 0.6 + 0.01 * 0.5 + 0.8 * 0.2, "0.765 example");

  ClassMask square(4, 4, 2, 0);
  for (std::size_t y = 1; y < 3; ++y) {
    for (std::size_t x = 1; x < 3; ++x) square.at(y, x) = 1;
  }
  const Tensor w = boundary_weights(square, 1.0, 0.0, 0);
  std::size_t twos = 0, ones = 0;
  for (double x : w.values()) {
    twos += x == 2.0;
    ones += x == 1.0;
  }
  c.expect(twos == 12 && ones == 4, "4x4 square boundary count " + std::to_string(twos));
  return "zero at perfection, total = L_iou + 0.01 L_dice + 0.8 L_wce, 12 boundary pixels";
}

// 7. Overfit run on the bundled synthetic config.
std::string criterion_overfit(Checks& c, const fs::path& scratch) {
  const RunConfig rc = bundled_config();
  const TrainConfig& cfg = rc.train;
  c.expect(cfg.optimizer == OptimizerKind::Adam && cfg.learning_rate == 1e-3, "config is not Adam 1e-3");
  c.expect(cfg.model.encoder.name == EncoderSpec::tiny().name, "config does not use the tiny encoder");
  const std::size_t steps = cfg.epochs * ((cfg.dataset.synthetic.train_samples + cfg.batch_size - 1) / cfg.batch_size);
  c.expect(steps <= 300, std::to_string(steps) + " optimizer steps");

  const auto t0 = Clock::now();
  const TrainResult r = train(cfg, to_ini(rc), scratch / "overfit");
  const double elapsed = seconds_since(t0);
  const Corpus corpus = load_corpus(cfg);
  const MetricsReport on_train = evaluate(r.model, corpus.train, std::nullopt);
  c.expect(on_train.pixel_accuracy >= 0.95, "training pixel accuracy " + fmt("%.4f", on_train.pixel_accuracy));
  c.expect(elapsed < 300.0, "took " + fmt("%.0f s", elapsed));

  std::ifstream csv(r.loss_csv);
  std::string line;
  std::getline(csv, line);
  std::vector<double> losses;
  while (std::getline(csv, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    losses.push_back(std::stod(line.substr(a + 1, b - a - 1)));
  }
  c.expect(losses.size() == cfg.epochs, "csv has " + std::to_string(losses.size()) + " rows");
  double previous = std::numeric_limits<double>::infinity();
  std::size_t windows = 0;
  for (std::size_t start = 0; start + 20 <= losses.size(); start += 20, ++windows) {
    const double mean = std::accumulate(losses.begin() + start, losses.begin() + start + 20, 0.0) / 20.0;
    c.expect(mean <= previous, "window " + std::to_string(windows) + " rises to " + fmt("%.6f", mean));
    previous = mean;
  }
  return std::to_string(steps) + " steps, train pixel accuracy " + fmt("%.4f", on_train.pixel_accuracy) +
         ", loss " + fmt("%.3f", losses.front()) + " -> " + fmt("%.3f", losses.back()) + " over " +
         std::to_string(windows) + " windows, " + fmt("%.0f s", elapsed);
}

// 8. Determinism, bit-exact round trip and the CLI pipeline.
std::string criterion_persistence(Checks& c, const fs::path& scratch) {
  RunConfig rc = bundled_config();
  rc.train.epochs = 3;
  const std::string text = to_ini(rc);
  const TrainResult a = train(rc.train, text, scratch / "det_a");
  const TrainResult b = train(rc.train, text, scratch / "det_b");
  const std::string bytes = read_file(a.checkpoint);
  c.expect(!bytes.empty() && bytes == read_file(b.checkpoint), "repeated runs differ");

  const LoadedCheckpoint loaded = load_checkpoint(a.checkpoint);
  save_checkpoint(loaded.model, text, loaded.epoch, scratch / "resaved.ckpt");
  c.expect(read_file(scratch / "resaved.ckpt") == bytes, "re-saved checkpoint differs");
  const auto pa = a.model.parameters(), pb = loaded.model.parameters();
  bool same = pa.params.size() == pb.params.size();
  for (std::size_t i = 0; same && i < pa.params.size(); ++i) {
    same = checksum(pa.params[i].second.value()) == checksum(pb.params[i].second.value());
  }
  c.expect(same, "loaded weights differ");

  std::ostringstream out, err;
  auto run = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "msaunet");
    const int code = run_cli(args, out, err);
    c.expect(code == 0, args[1] + " exited " + std::to_string(code) + ": " + err.str());
  };
  const fs::path cli_out = scratch / "cli";
  run({"train", "--config", MSAUNET_BUNDLED_CONFIG, "--epochs", "2", "--out", cli_out.string()});
  run({"eval", "--checkpoint", (cli_out / kCheckpointFile).string(), "--out", (cli_out / "eval").string()});

  // One synthetic sample written back to 8-bit RGB as the prediction input.
  const Sample s = synthetic_shapes(1, 64, 3, 99).front();
  RasterImage img{64, 64, 3, false, std::vector<std::uint8_t>(64 * 64 * 3), {}};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t i = 0; i < 64 * 64; ++i) {
      const double v = std::clamp(s.image[ch * 64 * 64 + i] * 0.5 + 0.5, 0.0, 1.0);
      img.pixels[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  write_png(scratch / "sample.png", img);
  run({"predict", "--checkpoint", (cli_out / kCheckpointFile).string(), "--input", (scratch / "sample.png").string(),
       "--out", (cli_out / "pred").string(), "--overlay"});

  const fs::path artifacts[] = {cli_out / "config.ini",          cli_out / kCheckpointFile,
                                cli_out / kLossCsvFile,          cli_out / kReportTextFile,
                                cli_out / kReportCsvFile,        cli_out / "eval" / kReportTextFile,
                                cli_out / "eval" / kReportCsvFile, cli_out / "pred" / "sample_mask.png",
                                cli_out / "pred" / "sample_overlay.png"};
  std::size_t present = 0;
  for (const auto& p : artifacts) {
    const bool ok = fs::exists(p) && fs::file_size(p) > 0;
    c.expect(ok, "missing " + p.filename().string());
    present += ok;
  }
  return "checkpoints identical (" + std::to_string(bytes.size()) + " bytes), round trip exact, " +
         std::to_string(present) + " CLI artifacts";
}

}  // namespace

int main() {
  testing::TempDir scratch("acceptance");
  const std::vector<std::pair<std::string, std::function<std::string(Checks&)>>> criteria = {
      {"soft-IoU gradient", criterion_iou_gradient},
      {"end-to-end gradient", criterion_network_gradient},
      {"shape pipeline", criterion_shapes},
      {"attention range", criterion_attention},
      {"metrics oracle", criterion_metrics},
      {"loss identities", criterion_loss_identities},
      {"overfit smoke test", [&](Checks& c) { return criterion_overfit(c, scratch.path()); }},
      {"determinism and persistence", [&](Checks& c) { return criterion_persistence(c, scratch.path()); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Checks checks;
    std::string detail;
    try {
      detail = criteria[i].second(checks);
    } catch (const std::exception& e) {
      checks.failures.push_back(std::string("exception: ") + e.what());
    }
    const bool ok = checks.failures.empty();
    failed += !ok;
    std::cout << "criterion " << i + 1 << " " << (ok ? "PASS" : "FAIL") << "  " << criteria[i].first;
    if (ok) {
      std::cout << ": " << detail;
    } else {
      std::cout << ": " << checks.failures.front();
      for (std::size_t k = 1; k < checks.failures.size(); ++k) std::cout << "; " << checks.failures[k];
    }
    std::cout << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
