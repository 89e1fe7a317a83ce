#include <fstream>
#include <sstream>

#include "doctest.h"
#include "msaunet/cli.hpp"
#include "msaunet/data_pipeline.hpp"
#include "msaunet/image_io.hpp"
#include "msaunet/run_config.hpp"
#include "support.hpp"

using namespace msaunet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "msaunet");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kModelConfig =
    "[model]\nnum_classes = 3\ninput_height = 64\ninput_width = 64\ndecoder_channels = 16,12,8,6,4\n"
    "[encoder]\npreset = tiny\n"
    "[training]\nepochs = 1\nbatch_size = 4\n"
    "[dataset]\nnorm_mean = 0.5,0.5,0.5\nnorm_std = 0.5,0.5,0.5\n";

const char* kSynthetic = "kind = synthetic\nsynthetic_train_samples = 2\nsynthetic_val_samples = 2\n";

fs::path write_config(const fs::path& dir, const std::string& extra = "") {
  const fs::path p = dir / "run.ini";
  std::ofstream(p) << kModelConfig << kSynthetic << extra;
  return p;
}

RasterImage indexed_mask(std::size_t w, std::size_t h, std::vector<std::uint8_t> pixels) {
  return RasterImage{w, h, 1, true, std::move(pixels), voc_palette()};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help lists every config key") {
    const Run r = cli({"--help"});
    CHECK(r.code == 0);
    for (const char* k : {"learning_rate", "decoder_channels", "wce_reduction", "mask_encoding", "checkpoint_every"}) {
      CHECK(r.out.find(k) != std::string::npos);
    }
    CHECK(cli({}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
  }

  TEST_CASE("train writes artifacts, echoes overrides and rejects bad ones") {
    testing::TempDir dir("cli_train");
    const fs::path cfg = write_config(dir.path());
    const fs::path out = dir.path() / "run";
    const Run r = cli({"train", "--config", cfg.string(), "--lr", "1e-4", "--out", out.string()});
    REQUIRE(r.code == 0);
    for (const char* f : {"model.ckpt", "loss.csv", "metrics.txt", "metrics.csv", "config.ini"}) {
      CHECK(fs::exists(out / f));
    }
    const RunConfig echoed = load_run_config(out / "config.ini");
    CHECK(echoed.train.learning_rate == 1e-4);
    CHECK(read_file(out / "config.ini").find("learning_rate = 0.0001") != std::string::npos);

    const Run bad = cli({"train", "--config", cfg.string(), "--optimizer", "bogus", "--out", out.string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("bogus") != std::string::npos);

    std::ofstream(dir.path() / "typo.ini") << "[training]\nepoch = 3\n";
    const Run typo = cli({"train", "--config", (dir.path() / "typo.ini").string()});
    CHECK(typo.code == 2);
    CHECK(typo.err.find("training.epoch") != std::string::npos);
  }

  TEST_CASE("eval, predict and metrics around a trained checkpoint") {
    testing::TempDir dir("cli_eval");
    const fs::path cfg = write_config(dir.path());
    const fs::path run = dir.path() / "run";
    REQUIRE(cli({"train", "--config", cfg.string(), "--out", run.string()}).code == 0);
    const std::string ckpt = (run / "model.ckpt").string();

    CHECK(cli({"eval", "--checkpoint", (dir.path() / "none.ckpt").string()}).code == 2);
    const Run ev = cli({"eval", "--checkpoint", ckpt, "--out", (dir.path() / "ev").string()});
    CHECK(ev.code == 0);
    for (const char* k : {"pixel_accuracy: ", "mean_iou: ", "fw_iou: ", "dice: "}) {
      CHECK(ev.out.find(k) != std::string::npos);
    }

    // Build a directory dataset whose ground truth is the model's own prediction.
    const fs::path data = dir.path() / "data";
    fs::create_directories(data / "JPEGImages");
    fs::create_directories(data / "SegmentationClass");
    std::vector<std::string> inputs;
    std::mt19937_64 rng(4);
    for (int i = 0; i < 2; ++i) {
      RasterImage img{64, 64, 3, false, std::vector<std::uint8_t>(64 * 64 * 3), {}};
      for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() % 256);
      inputs.push_back((data / "JPEGImages" / ("img" + std::to_string(i) + ".png")).string());
      write_png(inputs.back(), img);
    }
    const fs::path pred = dir.path() / "pred";
    std::vector<std::string> args{"predict", "--checkpoint", ckpt, "--out", pred.string(), "--overlay", "--input"};
    args.insert(args.end(), inputs.begin(), inputs.end());
    const Run pr = cli(args);
    REQUIRE(pr.code == 0);
    for (int i = 0; i < 2; ++i) {
      const fs::path mask = pred / ("img" + std::to_string(i) + "_mask.png");
      REQUIRE(fs::exists(mask));
      CHECK(fs::exists(pred / ("img" + std::to_string(i) + "_overlay.png")));
      const RasterImage m = read_image(mask, true);
      CHECK(m.indexed);
      CHECK(m.width == 64);
      for (auto v : m.pixels) CHECK(v < 3);
      fs::copy_file(mask, data / "SegmentationClass" / ("img" + std::to_string(i) + ".png"));
    }

    std::ofstream(dir.path() / "dir.ini") << kModelConfig << "kind = directory\nroot = data\n";
    const Run perfect = cli({"eval", "--config", (dir.path() / "dir.ini").string(), "--checkpoint", ckpt, "--out",
                             (dir.path() / "perfect").string()});
    REQUIRE(perfect.code == 0);
    for (const char* k : {"pixel_accuracy: 1.000000", "mean_iou: 1.000000", "fw_iou: 1.000000", "dice: 1.000000"}) {
      CHECK(perfect.out.find(k) != std::string::npos);
    }

    std::ofstream(dir.path() / "text.png") << "plain text";
    CHECK(cli({"predict", "--checkpoint", ckpt, "--out", pred.string(), "--input",
               (dir.path() / "text.png").string()}).code == 2);
  }

  TEST_CASE("metrics subcommand") {
    testing::TempDir dir("cli_metrics");
    const fs::path a = dir.path() / "a", b = dir.path() / "b", c = dir.path() / "c";
    for (const auto& d : {a, b, c}) fs::create_directories(d);
    write_png(a / "x.png", indexed_mask(2, 2, {0, 1, 1, 0}));
    write_png(b / "x.png", indexed_mask(2, 2, {0, 1, 1, 0}));
    write_png(a / "y.png", indexed_mask(2, 1, {1, 1}));
    write_png(b / "y.png", indexed_mask(2, 1, {1, 1}));
    const Run same = cli({"metrics", "--pred", a.string(), "--gt", b.string(), "--classes", "2"});
    REQUIRE(same.code == 0);
    for (const char* k : {"pixel_accuracy: 1.000000", "mean_iou: 1.000000", "fw_iou: 1.000000", "dice: 1.000000"}) {
      CHECK(same.out.find(k) != std::string::npos);
    }

    // Disjoint foreground: class 1 never overlaps.
    write_png(c / "x.png", indexed_mask(2, 2, {1, 0, 0, 0}));
    write_png(c / "y.png", indexed_mask(2, 1, {0, 0}));
    const Run disjoint = cli({"metrics", "--pred", c.string(), "--gt", b.string(), "--classes", "2", "--out",
                              (dir.path() / "rep").string()});
    REQUIRE(disjoint.code == 0);
    CHECK(disjoint.out.find("iou_class_1: 0.000000") != std::string::npos);
    CHECK(fs::exists(dir.path() / "rep" / "metrics.csv"));

    write_png(a / "z.png", indexed_mask(1, 1, {0}));
    const Run unmatched = cli({"metrics", "--pred", a.string(), "--gt", b.string(), "--classes", "2"});
    CHECK(unmatched.code == 2);
    CHECK(unmatched.err.find("'z'") != std::string::npos);
  }
}
