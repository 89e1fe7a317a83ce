#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msaunet/data_pipeline.hpp"
#include "msaunet/losses.hpp"
#include "msaunet/metrics.hpp"
#include "msaunet/network.hpp"

namespace msaunet {

enum class OptimizerKind { Sgd, RmsProp, Adam };

// Throws ConfigError naming the value.
OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

enum class DatasetKind { Synthetic, Directory };

struct SyntheticSpec {
  std::size_t train_samples = 4;
  std::size_t val_samples = 4;
  std::uint64_t seed = 7;
};

struct DatasetConfig {
  DatasetKind kind = DatasetKind::Synthetic;
  SyntheticSpec synthetic;
  DatasetLayout layout;        // directory datasets; num_classes follows the model
  std::string val_split_list;  // empty: evaluate on the training split
  Normalization norm;
};

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  CompoundLossConfig loss;
  MsauNetConfig model;
  DatasetConfig dataset;
  std::size_t checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
  std::uint64_t seed = 42;
  bool shuffle = true;

  void validate() const;
};

// Per-parameter accumulators. Adam uses both moments, RMSProp the second.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  std::size_t step = 0;
  std::vector<Tensor> first;
  std::vector<Tensor> second;

  static constexpr double kAdamBeta1 = 0.9;
  static constexpr double kAdamBeta2 = 0.999;
  static constexpr double kRmsDecay = 0.99;
  static constexpr double kEps = 1e-8;
};

// Applies one update using each parameter's accumulated gradient. An empty
// gradient counts as zero.
void optimizer_step(const std::vector<ag::Var>& params, OptimizerState& state);

struct Corpus {
  std::vector<Sample> train;
  std::vector<Sample> val;  // may be empty
};

Corpus load_corpus(const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  LossComponents components;  // training means
};

std::string loss_csv_header();
std::string loss_csv_row(const EpochRecord& r);

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  MsauNetState model;
  std::vector<EpochRecord> history;
  MetricsReport report;
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
  std::filesystem::path report_text;
  std::filesystem::path report_csv;
};

// Artifact file names inside the output directory.
inline constexpr const char* kCheckpointFile = "model.ckpt";
inline constexpr const char* kLossCsvFile = "loss.csv";
inline constexpr const char* kReportTextFile = "metrics.txt";
inline constexpr const char* kReportCsvFile = "metrics.csv";

// Trains from scratch and writes the artifacts into out_dir. The embedded
// config text is stored in every checkpoint. Throws NumericalError naming
// the loss component that went non-finite.
TrainResult train(const TrainConfig& config, const std::string& config_text, const std::filesystem::path& out_dir,
                  const TrainHooks& hooks = {});

// Runs the compound loss over a dataset in evaluation mode; mean per image.
LossValue dataset_loss(const MsauNetState& model, const std::vector<Sample>& samples,
                       const CompoundLossConfig& loss, std::size_t batch_size = 4);

MetricsReport evaluate(const MsauNetState& model, const std::vector<Sample>& samples,
                       std::optional<std::int32_t> ignore_index = ConfusionMatrix::kDefaultIgnore,
                       std::size_t batch_size = 4);
ConfusionMatrix confusion(const MsauNetState& model, const std::vector<Sample>& samples,
                          std::optional<std::int32_t> ignore_index, std::size_t batch_size = 4);

void write_report(const MetricsReport& report, const std::filesystem::path& text_path,
                  const std::filesystem::path& csv_path);

}  // namespace msaunet
