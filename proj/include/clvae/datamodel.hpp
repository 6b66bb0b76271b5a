#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace clvae {

enum class Label { Normal, Anomaly };
enum class Split { Train, Val, Test, Unassigned };

std::string_view to_string(Label label);
std::string_view to_string(Split split);
Label parse_label(std::string_view text);
Split parse_split(std::string_view text);

// Integer class map over an image, row-major H x W.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int> classes;
  std::vector<int> vocabulary;  // sorted, unique

  int at(int y, int x) const { return classes[static_cast<std::size_t>(y) * width + x]; }
  // Checks every pixel class is in the vocabulary.
  void validate() const;
};

// One image with its label. Pixels are H x W x C interleaved floats in [0, 1].
struct ImageSample {
  std::string id;
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> pixels;
  Label label = Label::Normal;
  std::optional<std::vector<std::uint8_t>> anomaly_mask;  // H x W, nonzero = anomalous
  Split split = Split::Unassigned;
  std::string dataset;

  // Scene annotations from the synthetic generator; empty for loaded images.
  std::optional<LabelMap> semantics;
  std::vector<int> object_classes;

  float px(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::size_t mask_popcount() const;

  // Throws DataError when a range, shape or mask invariant is violated.
  void validate() const;
};

// Exact rational used for split fractions.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational from_decimal(std::string_view text);
  static Rational from_double(double v);  // via the shortest round-trip decimal form
  Rational normalized() const;
  bool operator==(const Rational& o) const;
};
Rational operator+(const Rational& a, const Rational& b);

struct SplitSpec {
  Rational train{7, 10};
  Rational val{2, 10};
  Rational test{1, 10};
  std::uint64_t seed = 0;

  // Fractions nonnegative and summing exactly to one.
  void validate() const;
};

struct DatasetSplits {
  std::vector<ImageSample> train;
  std::vector<ImageSample> val;
  std::vector<ImageSample> test;
};

struct ManifestEntry {
  std::filesystem::path image;
  std::optional<std::filesystem::path> mask;
  Label label = Label::Normal;
  std::string dataset;
  std::optional<Split> split;
  std::string id;  // defaults to the image file stem
};

struct DatasetManifest {
  int version = 1;
  std::vector<ManifestEntry> entries;

  std::size_t count(Split split) const;
};

struct ClassCounts {
  std::uint64_t pixels = 0;
  std::uint64_t instances = 0;
};

struct ClassFrequencyTable {
  std::map<int, ClassCounts> counts;
  std::uint64_t total_pixels = 0;
  std::uint64_t total_instances = 0;

  double pixel_frequency(int class_id) const;
  double instance_frequency(int class_id) const;
};

enum class ObjectShape { Rectangle, Ellipse, Triangle, Diamond };
std::string_view to_string(ObjectShape shape);
ObjectShape parse_shape(std::string_view text);

struct ObjectClass {
  int class_id = 0;
  std::string name;
  ObjectShape shape = ObjectShape::Rectangle;
  std::array<float, 3> color{};
  double min_size = 0.1;  // bounding-box side as a fraction of the image side
  double max_size = 0.2;
  double weight = 1.0;  // relative occurrence frequency (normal vocabulary only)
};

struct SynthSceneSpec {
  int image_size = 64;
  std::array<float, 3> sky_color{0.55f, 0.65f, 0.80f};
  std::array<float, 3> road_color{0.35f, 0.35f, 0.37f};
  double horizon_min = 0.30;  // horizon row as a fraction of the height
  double horizon_max = 0.45;
  double texture_noise = 0.03;
  double brightness_jitter = 0.08;
  double color_jitter = 0.04;
  int min_objects = 2;
  int max_objects = 4;
  std::vector<ObjectClass> normal_objects;
  std::vector<ObjectClass> anomaly_objects;
  double anomaly_area_min = 0.02;  // anomaly mask area as a fraction of the image
  double anomaly_area_max = 0.10;
  std::uint64_t seed = 0;

  // Default urban-ish vocabulary: cars, trees, signs, buses vs. two anomaly kinds.
  static SynthSceneSpec defaults();
  void validate() const;

  static constexpr int kSkyClass = 0;
  static constexpr int kRoadClass = 1;
};

// Manifest file handling.
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Reads images (and masks) referenced by a manifest, downsampling to size x size.
std::vector<ImageSample> load_samples(const DatasetManifest& manifest, int size);

std::vector<ImageSample> filter_by_anomaly_pixels(const std::vector<ImageSample>& samples,
                                                  std::size_t min_pixels);

// Deterministic shuffle + floor partition; the remainder goes train, then val.
DatasetSplits split_dataset(const std::vector<ImageSample>& samples, const SplitSpec& spec);

// Bilinear resampling with half-pixel centers. Pixels are H x W x C interleaved.
std::vector<float> downsample_image(const std::vector<float>& pixels, int height, int width,
                                    int channels, int target_height, int target_width);

std::vector<ImageSample> generate_synthetic_dataset(const SynthSceneSpec& spec, int n_normal,
                                                    int n_anomaly);

ClassFrequencyTable compute_class_frequencies(const std::vector<LabelMap>& label_maps);

// 4-connected components; returns per-pixel component index (row-major) and the
// number of components.
std::pair<std::vector<int>, int> connected_components(const LabelMap& map);

}  // namespace clvae
