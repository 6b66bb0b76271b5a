#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clvae/adam.hpp"
#include "clvae/datamodel.hpp"
#include "clvae/discrepancy.hpp"
#include "clvae/losses.hpp"
#include "clvae/vae.hpp"

namespace clvae {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | manifest
  std::string manifest;              // used when source = manifest
  int n_normal = 500;
  int n_anomaly = 100;
  std::size_t min_anomaly_pixels = 0;
  int per_dataset_cap = 0;  // max samples kept per dataset tag, 0 = no cap
  double anomaly_area_min = 0.02;
  double anomaly_area_max = 0.10;
  int min_objects = 2;
  int max_objects = 4;
  double texture_noise = 0.03;
};

struct DiscrepancyConfig {
  std::string provider = "oracle";  // oracle | files
  std::string dir;
  double noise_level = 0.05;
  int blur_radius = 1;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 12;
  double lr = 1e-4;
  bool linear_decay = true;
  AdamOptions adam;
  double anomaly_fraction = -1.0;  // per-batch anomaly share; negative = natural order
  int checkpoint_every = 0;        // epochs; 0 = only at the end
};

struct SeedConfig {
  std::uint64_t model = 1;
  std::uint64_t data = 1;
  std::uint64_t backbone = 7;
};

struct AblationConfig {
  bool use_discrepancy = false;
  bool use_distance_loss = false;
  bool use_cluster_loss = false;
  bool use_perceptual_loss = true;
};

struct SweepConfig {
  std::string axis = "beta";  // beta | latent_channels | use_discrepancy
  std::vector<double> values{1.0, 0.01};
};

struct ExperimentConfig {
  VaeSpec vae;  // input_channels and seed are derived, see model_spec()
  LossWeights loss;
  double distance_radius = 100.0;
  double prior_delta = 3.0;
  std::string recon_reduction = "mean";  // mean | sum
  SplitSpec split;
  DataConfig data;
  DiscrepancyConfig discrepancy;
  TrainConfig train;
  SeedConfig seeds;
  AblationConfig ablation;
  int kmeans_k = 2;
  SweepConfig sweep;
  std::string out = "runs";

  VaeSpec model_spec() const;
  SynthSceneSpec scene_spec() const;
  ObjectiveSwitches switches() const;
  LossWeights effective_weights() const;
  void validate() const;

  // Hash of the canonical JSON form without the output directory.
  std::string hash() const;
  std::filesystem::path run_dir() const { return std::filesystem::path(out) / hash(); }
};

nlohmann::json config_to_json(const ExperimentConfig& config);
// Missing keys take defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

// Sets a dotted key, e.g. "train.lr=0.001". The value is read as JSON when it
// parses, otherwise as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);
void apply_seed(ExperimentConfig& config, std::uint64_t seed);

std::string canonical_dump(const nlohmann::json& j);
std::string fnv1a_hex(const std::string& text);

}  // namespace clvae
