#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clvae/clustering.hpp"
#include "clvae/config.hpp"
#include "clvae/datamodel.hpp"
#include "clvae/losses.hpp"
#include "clvae/metrics.hpp"
#include "clvae/vae.hpp"

namespace clvae {

// Stacks samples into an n x C x H x W tensor.
Tensor to_tensor(const std::vector<ImageSample>& samples);
Tensor to_tensor(const std::vector<ImageSample>& samples, const std::vector<std::size_t>& index);
std::vector<Label> labels_of(const std::vector<ImageSample>& samples);
// Flattened mu rows.
PointMatrix flatten_latents(const Tensor& mu);

// Loads or generates the dataset, filters it, splits every dataset tag with the
// configured fractions and attaches discrepancy channels when enabled.
DatasetSplits prepare_data(const ExperimentConfig& config);

struct EpochSummary {
  int epoch = 0;
  int steps = 0;
  LossBreakdown mean;
};

struct TrainResult {
  ConditionedVae model;
  std::vector<EpochSummary> epochs;
  long steps = 0;
  std::filesystem::path metrics_log;
  std::filesystem::path checkpoint;
};

using ProgressFn = std::function<void(const EpochSummary&)>;

// Trains on splits.train and writes metrics.jsonl and checkpoint.clvae into dir.
TrainResult train_model(const ExperimentConfig& config, const DatasetSplits& data,
                        const std::filesystem::path& dir, const ProgressFn& progress = {});

struct EvalReport {
  std::string config_hash;
  double fid = 0, mse = 0, auroc = 0, tpr = 0, fpr = 0, accuracy = 0;
  double train_tpr = 0, train_fpr = 0, train_accuracy = 0;
  std::size_t n_test = 0;
  double wall_clock_seconds = 0;
  std::vector<EpochSummary> epochs;
  std::string scatter_path;
  RocCurve roc;
  ClusterModel clusters;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// Fits k-means on train latents, classifies test latents and measures the
// reconstructions. Writes report.json, roc.csv, scatter.csv, boxplot.csv and
// clusters.clvae into dir.
EvalReport evaluate_model(const ExperimentConfig& config, const ConditionedVae& model,
                          const DatasetSplits& data, const std::filesystem::path& dir);

// Checkpoint files.
void save_checkpoint(const std::filesystem::path& path, const ConditionedVae& model,
                     const ExperimentConfig& config, int epoch);
ConditionedVae load_checkpoint(const std::filesystem::path& path);

// CLI commands. Each returns the run directory it wrote.
std::filesystem::path cmd_generate(const ExperimentConfig& config);
std::filesystem::path cmd_train(const ExperimentConfig& config, const ProgressFn& progress = {});
std::filesystem::path cmd_eval(const ExperimentConfig& config,
                               const std::filesystem::path& checkpoint = {});
std::filesystem::path cmd_sweep(const ExperimentConfig& config, const ProgressFn& progress = {});
std::filesystem::path cmd_report(const std::filesystem::path& run_dir);

// Writes config.json into the run directory and returns the directory.
std::filesystem::path prepare_run_dir(const ExperimentConfig& config);

// Hex FNV-1a of a file's bytes.
std::string file_hash(const std::filesystem::path& path);

}  // namespace clvae
