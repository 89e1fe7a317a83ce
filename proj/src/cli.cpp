#include "msaunet/cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "CLI11.hpp"
#include "msaunet/checkpoint.hpp"
#include "msaunet/errors.hpp"
#include "msaunet/image_io.hpp"
#include "msaunet/run_config.hpp"
#include "msaunet/training.hpp"

namespace msaunet {
namespace {

namespace fs = std::filesystem;

struct TrainArgs {
  std::string config;
  double lr = 0.0;
  std::string optimizer;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  std::string out;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* optimizer_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::string out;
};

struct PredictArgs {
  std::string config;
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string out;
  bool overlay = false;
};

struct MetricsArgs {
  std::string pred;
  std::string gt;
  std::size_t classes = 0;
  std::int32_t ignore = ConfusionMatrix::kDefaultIgnore;
  std::string encoding = "indexed-palette";
  std::string out;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = load_run_config(a.config);
  if (a.lr_opt->count()) rc.train.learning_rate = a.lr;
  if (a.optimizer_opt->count()) rc.train.optimizer = parse_optimizer(a.optimizer);
  if (a.epochs_opt->count()) rc.train.epochs = a.epochs;
  if (a.seed_opt->count()) rc.train.seed = a.seed;
  if (a.out_opt->count()) rc.output_dir = a.out;
  rc.train.validate();

  fs::create_directories(rc.output_dir);
  const std::string effective = to_ini(rc);
  write_file(rc.output_dir / "config.ini", effective);

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << "/" << rc.train.epochs << "  " << loss_csv_row(r) << "\n" << std::flush;
  };
  const TrainResult result = train(rc.train, effective, rc.output_dir, hooks);
  out << result.report.to_text();
  out << "wrote " << result.checkpoint.string() << ", " << result.loss_csv.string() << ", "
      << result.report_text.string() << "\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  LoadedCheckpoint loaded = load_checkpoint(a.checkpoint);
  RunConfig rc = a.config.empty() ? loaded.config : load_run_config(a.config);
  rc.train.model = loaded.config.train.model;
  const Corpus corpus = load_corpus(rc.train);
  const auto& samples = corpus.val.empty() ? corpus.train : corpus.val;
  const auto ignore = rc.train.dataset.kind == DatasetKind::Directory ? rc.train.dataset.layout.void_label
                                                                      : std::optional<std::int32_t>{};
  const MetricsReport report = evaluate(loaded.model, samples, ignore, rc.train.batch_size);
  const fs::path dir = a.out.empty() ? rc.output_dir : fs::path(a.out);
  fs::create_directories(dir);
  write_report(report, dir / kReportTextFile, dir / kReportCsvFile);
  out << report.to_text();
  return kExitOk;
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  LoadedCheckpoint loaded = load_checkpoint(a.checkpoint);
  const RunConfig rc = a.config.empty() ? loaded.config : load_run_config(a.config);
  const auto& model_cfg = loaded.config.train.model;
  const fs::path dir = a.out.empty() ? rc.output_dir : fs::path(a.out);
  fs::create_directories(dir);
  const auto palette = voc_palette();
  for (const auto& input : a.inputs) {
    const RasterImage image = read_image(input);
    const Tensor x = preprocess(image, model_cfg.input_h, model_cfg.input_w, rc.train.dataset.norm);
    Tensor logits;
    {
      ag::NoGradGuard no_grad;
      logits = forward(ag::Var(x), loaded.model, nn::Mode::Eval).value();
    }
    const ClassMask mask = resize_mask(predict_mask(logits), image.height, image.width);

    RasterImage rendered;
    rendered.width = mask.width;
    rendered.height = mask.height;
    rendered.channels = 1;
    rendered.indexed = true;
    rendered.palette = palette;
    rendered.pixels.assign(mask.labels.begin(), mask.labels.end());
    const std::string stem = fs::path(input).stem().string();
    const fs::path mask_path = dir / (stem + "_mask.png");
    write_png(mask_path, rendered);
    out << mask_path.string() << "\n";

    if (a.overlay) {
      RasterImage blend;
      blend.width = image.width;
      blend.height = image.height;
      blend.channels = 3;
      blend.pixels.resize(image.width * image.height * 3);
      for (std::size_t i = 0; i < mask.size(); ++i) {
        const Rgb& colour = palette[static_cast<std::size_t>(mask.labels[i])];
        for (std::size_t c = 0; c < 3; ++c) {
          const unsigned src = image.pixels[i * image.channels + (image.channels == 1 ? 0 : c)];
          blend.pixels[i * 3 + c] = static_cast<std::uint8_t>((src + colour[c] + 1) / 2);
        }
      }
      const fs::path overlay_path = dir / (stem + "_overlay.png");
      write_png(overlay_path, blend);
      out << overlay_path.string() << "\n";
    }
  }
  return kExitOk;
}

std::map<std::string, fs::path> masks_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DatasetError("mask directory not found: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      out.emplace(entry.path().stem().string(), entry.path());
    }
  }
  return out;
}

int cmd_metrics(const MetricsArgs& a, std::ostream& out) {
  if (a.classes < 1) throw ConfigError("--classes must be >= 1");
  const MaskEncoding encoding = parse_mask_encoding(a.encoding);
  const auto preds = masks_by_stem(a.pred);
  const auto gts = masks_by_stem(a.gt);
  if (gts.empty()) throw DatasetError("no PNG masks in " + a.gt);
  for (const auto& [stem, path] : gts) {
    if (!preds.count(stem)) throw DatasetError("no prediction matches ground-truth stem '" + stem + "'");
  }
  for (const auto& [stem, path] : preds) {
    if (!gts.count(stem)) throw DatasetError("no ground truth matches prediction stem '" + stem + "'");
  }
  ConfusionMatrix cm(a.classes, a.ignore);
  for (const auto& [stem, gt_path] : gts) {
    const ClassMask gt = decode_mask(read_image(gt_path, true), encoding, a.classes, a.ignore);
    const ClassMask pred = decode_mask(read_image(preds.at(stem), true), encoding, a.classes, a.ignore);
    cm.accumulate(pred, gt);
  }
  const MetricsReport report = MetricsReport::from(cm);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_report(report, fs::path(a.out) / kReportTextFile, fs::path(a.out) / kReportCsvFile);
  }
  out << report.to_text();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MsAUNet: multi-scale attention U-Net for semantic segmentation"};
  app.require_subcommand(1);
  app.footer(describe_config_keys());

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
  train_cmd->add_option("--config", ta.config, "run config (INI)")->required();
  ta.lr_opt = train_cmd->add_option("--lr", ta.lr, "override optimizer.learning_rate");
  ta.optimizer_opt = train_cmd->add_option("--optimizer", ta.optimizer, "override optimizer.kind");
  ta.epochs_opt = train_cmd->add_option("--epochs", ta.epochs, "override training.epochs");
  ta.seed_opt = train_cmd->add_option("--seed", ta.seed, "override training.seed");
  ta.out_opt = train_cmd->add_option("--out", ta.out, "override output.dir");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the validation split");
  eval_cmd->add_option("--config", ea.config, "run config (default: the one stored in the checkpoint)");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--out", ea.out, "report directory (default: output.dir)");

  PredictArgs pa;
  auto* predict_cmd = app.add_subcommand("predict", "write class masks for images");
  predict_cmd->add_option("--config", pa.config, "run config (default: the one stored in the checkpoint)");
  predict_cmd->add_option("--checkpoint", pa.checkpoint, "model checkpoint")->required();
  predict_cmd->add_option("--input", pa.inputs, "input images")->required();
  predict_cmd->add_option("--out", pa.out, "output directory (default: output.dir)");
  predict_cmd->add_flag("--overlay", pa.overlay, "also write a colour overlay per image");

  MetricsArgs ma;
  auto* metrics_cmd = app.add_subcommand("metrics", "score predicted masks against ground truth");
  metrics_cmd->add_option("--pred", ma.pred, "directory of predicted PNG masks")->required();
  metrics_cmd->add_option("--gt", ma.gt, "directory of ground-truth PNG masks")->required();
  metrics_cmd->add_option("--classes", ma.classes, "number of classes")->required();
  metrics_cmd->add_option("--ignore", ma.ignore, "ground-truth label to skip")->capture_default_str();
  metrics_cmd->add_option("--encoding", ma.encoding, "mask encoding")->capture_default_str();
  metrics_cmd->add_option("--out", ma.out, "also write the report here");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(ta, out);
    if (eval_cmd->parsed()) return cmd_eval(ea, out);
    if (predict_cmd->parsed()) return cmd_predict(pa, out);
    if (metrics_cmd->parsed()) return cmd_metrics(ma, out);
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace msaunet
