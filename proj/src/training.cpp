#include "msaunet/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "msaunet/checkpoint.hpp"
#include "msaunet/errors.hpp"

namespace msaunet {
namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void check_finite(const LossValue& v, std::size_t epoch, std::size_t step) {
  const std::pair<const char*, double> parts[] = {
      {"l_iou", v.components.iou}, {"l_dice", v.components.dice}, {"l_wce", v.components.wce}, {"total", v.total}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) {
      throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                           ": " + name + " = " + std::to_string(value));
    }
  }
}

std::vector<ag::Var> trainable(const MsauNetState& model) {
  std::vector<ag::Var> out;
  for (const auto& [name, var] : model.parameters().params) out.push_back(var);
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "rmsprop") return OptimizerKind::RmsProp;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd, rmsprop or adam)");
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Sgd:
      return "sgd";
    case OptimizerKind::RmsProp:
      return "rmsprop";
    case OptimizerKind::Adam:
      return "adam";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a positive number");
  }
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  loss.validate();
  model.validate();
  if (loss.background_class < 0 || static_cast<std::size_t>(loss.background_class) >= model.num_classes) {
    throw ConfigError("background_class " + std::to_string(loss.background_class) + " is not a valid class");
  }
  for (double s : dataset.norm.std) {
    if (!(s > 0.0)) throw ConfigError("normalization std must be > 0");
  }
  if (dataset.kind == DatasetKind::Synthetic) {
    if (dataset.synthetic.train_samples < 1) throw ConfigError("synthetic_train_samples must be >= 1");
    if (model.input_h != model.input_w) throw ConfigError("synthetic data needs a square input size");
  } else if (dataset.layout.root.empty()) {
    throw ConfigError("dataset.root is required for directory datasets");
  }
}

void optimizer_step(const std::vector<ag::Var>& params, OptimizerState& state) {
  if (state.first.size() != params.size()) {
    state.first.clear();
    state.second.clear();
    for (const auto& p : params) {
      state.first.emplace_back(p.shape());
      state.second.emplace_back(p.shape());
    }
  }
  ++state.step;
  const double lr = state.lr;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(OptimizerState::kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(OptimizerState::kAdamBeta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ag::Var p = params[i];
    const Tensor& g = p.grad();
    if (g.empty()) {
      if (state.kind == OptimizerKind::Sgd) continue;
    } else if (!g.same_shape(p.value())) {
      throw ShapeError("optimizer_step: gradient " + shape_string(g.shape()) + " vs parameter " +
                       shape_string(p.shape()));
    }
    double* w = p.value().data();
    double* m = state.first[i].data();
    double* v = state.second[i].data();
    const std::size_t n = p.value().size();
    for (std::size_t k = 0; k < n; ++k) {
      const double gk = g.empty() ? 0.0 : g[k];
      switch (state.kind) {
        case OptimizerKind::Sgd:
          w[k] -= lr * gk;
          break;
        case OptimizerKind::RmsProp:
          v[k] = OptimizerState::kRmsDecay * v[k] + (1.0 - OptimizerState::kRmsDecay) * gk * gk;
          w[k] -= lr * gk / (std::sqrt(v[k]) + OptimizerState::kEps);
          break;
        case OptimizerKind::Adam:
          m[k] = OptimizerState::kAdamBeta1 * m[k] + (1.0 - OptimizerState::kAdamBeta1) * gk;
          v[k] = OptimizerState::kAdamBeta2 * v[k] + (1.0 - OptimizerState::kAdamBeta2) * gk * gk;
          w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + OptimizerState::kEps);
          break;
      }
    }
  }
}

Corpus load_corpus(const TrainConfig& config) {
  Corpus c;
  const auto& ds = config.dataset;
  if (ds.kind == DatasetKind::Synthetic) {
    const std::size_t size = config.model.input_h;
    c.train = synthetic_shapes(ds.synthetic.train_samples, size, config.model.num_classes, ds.synthetic.seed, ds.norm);
    if (ds.synthetic.val_samples > 0) {
      c.val = synthetic_shapes(ds.synthetic.val_samples, size, config.model.num_classes, ds.synthetic.seed + 1,
                               ds.norm);
    }
    return c;
  }
  DatasetLayout layout = ds.layout;
  layout.num_classes = config.model.num_classes;
  c.train = load_dataset(layout, config.model.input_h, config.model.input_w, ds.norm);
  if (!ds.val_split_list.empty()) {
    layout.split_list = ds.val_split_list;
    c.val = load_dataset(layout, config.model.input_h, config.model.input_w, ds.norm);
  }
  return c;
}

std::string loss_csv_header() { return "epoch,train_loss,val_loss,l_iou,l_dice,l_wce"; }

std::string loss_csv_row(const EpochRecord& r) {
  return std::to_string(r.epoch) + "," + fixed6(r.train_loss) + "," + fixed6(r.val_loss) + "," +
         fixed6(r.components.iou) + "," + fixed6(r.components.dice) + "," + fixed6(r.components.wce);
}

LossValue dataset_loss(const MsauNetState& model, const std::vector<Sample>& samples, const CompoundLossConfig& loss,
                       std::size_t batch_size) {
  ag::NoGradGuard no_grad;
  BatchIterator it(samples, batch_size);
  Batch batch;
  LossComponents sum;
  while (it.next(batch)) {
    const Tensor logits = forward(ag::Var(batch.images), model, nn::Mode::Eval).value();
    const double n = static_cast<double>(batch.masks.size());
    const LossValue v = compound_loss_batch(logits, batch.masks, loss);
    sum.iou += v.components.iou * n;
    sum.dice += v.components.dice * n;
    sum.wce += v.components.wce * n;
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  return combine({sum.iou * inv, sum.dice * inv, sum.wce * inv}, loss);
}

ConfusionMatrix confusion(const MsauNetState& model, const std::vector<Sample>& samples,
                          std::optional<std::int32_t> ignore_index, std::size_t batch_size) {
  ag::NoGradGuard no_grad;
  ConfusionMatrix cm(model.config.num_classes, ignore_index);
  BatchIterator it(samples, batch_size);
  Batch batch;
  while (it.next(batch)) {
    const Tensor logits = forward(ag::Var(batch.images), model, nn::Mode::Eval).value();
    const auto preds = predict_masks(logits);
    for (std::size_t i = 0; i < preds.size(); ++i) cm.accumulate(preds[i], batch.masks[i]);
  }
  return cm;
}

MetricsReport evaluate(const MsauNetState& model, const std::vector<Sample>& samples,
                       std::optional<std::int32_t> ignore_index, std::size_t batch_size) {
  return MetricsReport::from(confusion(model, samples, ignore_index, batch_size));
}

void write_report(const MetricsReport& report, const std::filesystem::path& text_path,
                  const std::filesystem::path& csv_path) {
  write_text(text_path, report.to_text());
  write_text(csv_path, report.csv_header() + "\n" + report.csv_row() + "\n");
}

TrainResult train(const TrainConfig& config, const std::string& config_text, const std::filesystem::path& out_dir,
                  const TrainHooks& hooks) {
  config.validate();
  const Corpus corpus = load_corpus(config);
  const std::vector<Sample>& val = corpus.val.empty() ? corpus.train : corpus.val;
  const auto ignore = config.dataset.kind == DatasetKind::Directory ? config.dataset.layout.void_label
                                                                    : std::optional<std::int32_t>{};

  std::filesystem::create_directories(out_dir);
  TrainResult result;
  result.model = build_network(config.model, config.seed);
  result.checkpoint = out_dir / kCheckpointFile;
  result.loss_csv = out_dir / kLossCsvFile;
  result.report_text = out_dir / kReportTextFile;
  result.report_csv = out_dir / kReportCsvFile;

  std::ofstream csv(result.loss_csv, std::ios::binary | std::ios::trunc);
  if (!csv) throw Error("cannot write " + result.loss_csv.string());
  csv << loss_csv_header() << "\n";

  const std::vector<ag::Var> params = trainable(result.model);
  OptimizerState opt;
  opt.kind = config.optimizer;
  opt.lr = config.learning_rate;
  BatchIterator batches(corpus.train, config.batch_size,
                        config.shuffle ? std::optional<std::uint64_t>(config.seed + 1) : std::nullopt);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    batches.start_epoch(epoch - 1);
    Batch batch;
    LossComponents sum;
    std::size_t step = 0;
    while (batches.next(batch)) {
      ++step;
      for (auto p : params) p.zero_grad();
      const ag::Var logits = forward(ag::Var(batch.images), result.model, nn::Mode::Train);
      const LossWithGrad loss = compound_loss_with_grad(logits.value(), batch.masks, config.loss);
      check_finite(loss.value, epoch, step);
      ag::backward(logits, loss.grad_logits);
      optimizer_step(params, opt);
      const double n = static_cast<double>(batch.masks.size());
      sum.iou += loss.value.components.iou * n;
      sum.dice += loss.value.components.dice * n;
      sum.wce += loss.value.components.wce * n;
    }
    const double inv = 1.0 / static_cast<double>(corpus.train.size());
    EpochRecord record;
    record.epoch = epoch;
    record.components = {sum.iou * inv, sum.dice * inv, sum.wce * inv};
    record.train_loss = combine(record.components, config.loss).total;
    const LossValue val_loss = dataset_loss(result.model, val, config.loss, config.batch_size);
    check_finite(val_loss, epoch, 0);
    record.val_loss = val_loss.total;
    csv << loss_csv_row(record) << "\n" << std::flush;
    result.history.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);
    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && epoch != config.epochs) {
      save_checkpoint(result.model, config_text, epoch,
                      out_dir / ("checkpoint_epoch_" + std::to_string(epoch) + ".ckpt"));
    }
  }
  for (auto p : params) p.zero_grad();
  save_checkpoint(result.model, config_text, config.epochs, result.checkpoint);
  result.report = evaluate(result.model, val, ignore, config.batch_size);
  write_report(result.report, result.report_text, result.report_csv);
  return result;
}

}  // namespace msaunet
