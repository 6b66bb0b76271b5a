#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "clvae/datamodel.hpp"
#include "clvae/rng.hpp"

namespace clvae {

struct Replacement {
  int instance = 0;  // connected-component index in the source map
  int original_class = 0;
  int replacement_class = 0;
};

struct ReplacementPlan {
  std::vector<Replacement> entries;
  std::uint64_t seed = 0;
};

enum class FrequencyBasis { Pixels, Instances };

struct ReplacementOptions {
  int min_instance_area = 16;  // components smaller than this are never picked
  FrequencyBasis basis = FrequencyBasis::Pixels;
};

// Per-pixel anomaly scores in [0, 1], row-major H x W.
struct DiscrepancyImage {
  int height = 0;
  int width = 0;
  std::vector<double> scores;

  void validate() const;
};

// Draws a class from `vocabulary` minus `original`, proportional to `weights`
// (aligned with vocabulary), renormalized over the remaining classes.
int draw_replacement_class(int original, const std::vector<int>& vocabulary,
                           const std::vector<double>& weights, Rng& rng);

// Synthetic anomalies whose replacement class follows the class's share of
// normal data, so rare classes are not over-represented as anomalies.
std::pair<LabelMap, ReplacementPlan> frequency_based_label_replacement(
    const LabelMap& map, const ClassFrequencyTable& freqs, int n_objects, std::uint64_t seed,
    const ReplacementOptions& options = {});

// Baseline: replacement class uniform over the vocabulary minus the original.
std::pair<LabelMap, ReplacementPlan> random_label_replacement(
    const LabelMap& map, int n_objects, std::uint64_t seed, const ReplacementOptions& options = {});

// Stand-in for a resynthesis-based discrepancy network: the box-blurred anomaly
// mask plus clipped Gaussian noise.
DiscrepancyImage oracle_discrepancy(const ImageSample& sample, double noise_level,
                                    std::uint64_t seed, int blur_radius = 1);

double mean_anomaly_score(const DiscrepancyImage& d);

struct ScoreStats {
  std::size_t n = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
};

// Five-number summary (quartiles by linear interpolation) plus the mean.
ScoreStats score_distribution_stats(std::vector<double> scores);
std::string stats_csv_header();
std::string stats_csv_row(const std::string& dataset, const ScoreStats& stats);

ImageSample attach_fourth_channel(const ImageSample& sample, const DiscrepancyImage& d);
ImageSample strip_fourth_channel(const ImageSample& sample);

// 8-bit grayscale PNG, 0 = normal, 255 = anomalous.
DiscrepancyImage load_discrepancy_png(const std::filesystem::path& path, int size);
void write_discrepancy_png(const std::filesystem::path& path, const DiscrepancyImage& d);

class DiscrepancyProvider {
 public:
  virtual ~DiscrepancyProvider() = default;
  virtual DiscrepancyImage provide(const ImageSample& sample) const = 0;
};

class OracleDiscrepancyProvider : public DiscrepancyProvider {
 public:
  OracleDiscrepancyProvider(double noise_level, std::uint64_t seed, int blur_radius = 1)
      : noise_(noise_level), seed_(seed), radius_(blur_radius) {}
  DiscrepancyImage provide(const ImageSample& sample) const override;

 private:
  double noise_;
  std::uint64_t seed_;
  int radius_;
};

// Reads `<dir>/<sample id>.png` produced by an external discrepancy stack.
class FileDiscrepancyProvider : public DiscrepancyProvider {
 public:
  explicit FileDiscrepancyProvider(std::filesystem::path dir) : dir_(std::move(dir)) {}
  DiscrepancyImage provide(const ImageSample& sample) const override;

 private:
  std::filesystem::path dir_;
};

}  // namespace clvae
