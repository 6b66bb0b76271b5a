#include "clvae/discrepancy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "clvae/errors.hpp"
#include "clvae/image_io.hpp"

namespace clvae {

void DiscrepancyImage::validate() const {
  if (scores.size() != static_cast<std::size_t>(height) * width)
    throw ShapeError("discrepancy image size does not match its dimensions");
  for (double v : scores)
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("discrepancy score outside [0,1]");
}

int draw_replacement_class(int original, const std::vector<int>& vocabulary,
                           const std::vector<double>& weights, Rng& rng) {
  if (vocabulary.size() != weights.size())
    throw DataError("replacement weights do not match the vocabulary");
  double total = 0;
  for (std::size_t i = 0; i < vocabulary.size(); ++i)
    if (vocabulary[i] != original) total += weights[i];
  if (!(total > 0))
    throw DataError("no replacement class with positive weight for class " +
                    std::to_string(original));
  double u = rng.uniform() * total;
  int last = original;
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    if (vocabulary[i] == original || weights[i] <= 0) continue;
    last = vocabulary[i];
    if (u < weights[i]) return vocabulary[i];
    u -= weights[i];
  }
  return last;  // floating-point slack lands on the last eligible class
}

namespace {

std::pair<LabelMap, ReplacementPlan> replace_instances(const LabelMap& map, int n_objects,
                                                       std::uint64_t seed,
                                                       const ReplacementOptions& options,
                                                       const std::vector<double>& weights) {
  map.validate();
  if (n_objects < 0) throw DataError("n_objects must be nonnegative");
  const auto [comp, count] = connected_components(map);
  std::vector<int> area(static_cast<std::size_t>(count), 0), comp_class(count, 0);
  for (std::size_t i = 0; i < comp.size(); ++i) {
    ++area[comp[i]];
    comp_class[comp[i]] = map.classes[i];
  }
  std::vector<int> eligible;
  for (int c = 0; c < count; ++c)
    if (area[c] >= options.min_instance_area) eligible.push_back(c);
  if (static_cast<std::size_t>(n_objects) > eligible.size())
    throw DataError("requested " + std::to_string(n_objects) + " replacements but the map has " +
                    std::to_string(eligible.size()) + " eligible instances");

  Rng rng(seed);
  // Partial Fisher-Yates: the first n_objects entries are a uniform subset.
  for (int i = 0; i < n_objects; ++i) {
    const auto j = i + rng.below(eligible.size() - static_cast<std::size_t>(i));
    std::swap(eligible[i], eligible[j]);
  }

  ReplacementPlan plan;
  plan.seed = seed;
  std::vector<int> new_class(static_cast<std::size_t>(count), -1);
  for (int i = 0; i < n_objects; ++i) {
    const int inst = eligible[i];
    const int repl = draw_replacement_class(comp_class[inst], map.vocabulary, weights, rng);
    plan.entries.push_back({inst, comp_class[inst], repl});
    new_class[inst] = repl;
  }
  LabelMap out = map;
  for (std::size_t i = 0; i < comp.size(); ++i)
    if (new_class[comp[i]] >= 0) out.classes[i] = new_class[comp[i]];
  return {std::move(out), std::move(plan)};
}

}  // namespace

std::pair<LabelMap, ReplacementPlan> frequency_based_label_replacement(
    const LabelMap& map, const ClassFrequencyTable& freqs, int n_objects, std::uint64_t seed,
    const ReplacementOptions& options) {
  std::vector<double> weights;
  for (int c : map.vocabulary) {
    auto it = freqs.counts.find(c);
    if (it == freqs.counts.end())
      throw DataError("class frequency table does not cover class " + std::to_string(c));
    weights.push_back(options.basis == FrequencyBasis::Pixels
                          ? static_cast<double>(it->second.pixels)
                          : static_cast<double>(it->second.instances));
  }
  return replace_instances(map, n_objects, seed, options, weights);
}

std::pair<LabelMap, ReplacementPlan> random_label_replacement(const LabelMap& map, int n_objects,
                                                              std::uint64_t seed,
                                                              const ReplacementOptions& options) {
  return replace_instances(map, n_objects, seed, options,
                           std::vector<double>(map.vocabulary.size(), 1.0));
}

// ------------------------------------------------------------------ oracle

namespace {
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace

DiscrepancyImage oracle_discrepancy(const ImageSample& sample, double noise_level,
                                    std::uint64_t seed, int blur_radius) {
  if (noise_level < 0) throw ConfigError("noise level must be nonnegative");
  if (sample.label == Label::Anomaly && !sample.anomaly_mask)
    throw DataError("anomalous sample " + sample.id + " has no mask");
  const int H = sample.height, W = sample.width;
  DiscrepancyImage d{H, W, std::vector<double>(static_cast<std::size_t>(H) * W, 0.0)};
  if (sample.anomaly_mask) {
    const auto& m = *sample.anomaly_mask;
    const double norm = 1.0 / ((2.0 * blur_radius + 1) * (2.0 * blur_radius + 1));
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        int hits = 0;
        for (int dy = -blur_radius; dy <= blur_radius; ++dy)
          for (int dx = -blur_radius; dx <= blur_radius; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < H && xx >= 0 && xx < W &&
                m[static_cast<std::size_t>(yy) * W + xx] != 0)
              ++hits;
          }
        d.scores[static_cast<std::size_t>(y) * W + x] = hits * norm;
      }
  }
  if (noise_level > 0) {
    Rng rng(derive_seed(seed, fnv1a(sample.id)));
    for (double& v : d.scores) v += noise_level * rng.normal();
  }
  for (double& v : d.scores) v = std::clamp(v, 0.0, 1.0);
  return d;
}

double mean_anomaly_score(const DiscrepancyImage& d) {
  d.validate();
  if (d.scores.empty()) throw DataError("empty discrepancy image");
  double s = 0;
  for (double v : d.scores) s += v;
  return s / static_cast<double>(d.scores.size());
}

ScoreStats score_distribution_stats(std::vector<double> scores) {
  if (scores.empty()) throw DataError("score_distribution_stats: empty list");
  std::sort(scores.begin(), scores.end());
  auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(scores.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, scores.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return scores[lo] + frac * (scores[hi] - scores[lo]);
  };
  ScoreStats s;
  s.n = scores.size();
  s.min = scores.front();
  s.max = scores.back();
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  s.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(s.n);
  return s;
}

std::string stats_csv_header() { return "dataset,n,min,q1,median,q3,max,mean"; }

std::string stats_csv_row(const std::string& dataset, const ScoreStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, ",%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", s.n, s.min, s.q1,
                s.median, s.q3, s.max, s.mean);
  return dataset + buf;
}

// ------------------------------------------------------------------ fourth channel

ImageSample attach_fourth_channel(const ImageSample& sample, const DiscrepancyImage& d) {
  if (sample.channels != 3) throw DataError("sample " + sample.id + " is not a 3-channel image");
  if (d.height != sample.height || d.width != sample.width)
    throw ShapeError("discrepancy image size differs from sample " + sample.id);
  d.validate();
  ImageSample out = sample;
  out.channels = 4;
  const std::size_t npx = static_cast<std::size_t>(sample.height) * sample.width;
  out.pixels.resize(npx * 4);
  for (std::size_t p = 0; p < npx; ++p) {
    for (int c = 0; c < 3; ++c) out.pixels[p * 4 + c] = sample.pixels[p * 3 + c];
    out.pixels[p * 4 + 3] = static_cast<float>(d.scores[p]);
  }
  out.validate();
  return out;
}

ImageSample strip_fourth_channel(const ImageSample& sample) {
  if (sample.channels != 4) throw DataError("sample " + sample.id + " has no fourth channel");
  ImageSample out = sample;
  out.channels = 3;
  const std::size_t npx = static_cast<std::size_t>(sample.height) * sample.width;
  out.pixels.resize(npx * 3);
  for (std::size_t p = 0; p < npx; ++p)
    for (int c = 0; c < 3; ++c) out.pixels[p * 3 + c] = sample.pixels[p * 4 + c];
  return out;
}

// ------------------------------------------------------------------ providers

DiscrepancyImage load_discrepancy_png(const std::filesystem::path& path, int size) {
  const RawImage raw = read_png(path, 1);
  std::vector<float> f(raw.data.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = raw.data[i] / 255.0f;
  const auto small = downsample_image(f, raw.height, raw.width, 1, size, size);
  DiscrepancyImage d{size, size, std::vector<double>(small.begin(), small.end())};
  d.validate();
  return d;
}

void write_discrepancy_png(const std::filesystem::path& path, const DiscrepancyImage& d) {
  d.validate();
  RawImage raw{d.width, d.height, 1, std::vector<std::uint8_t>(d.scores.size())};
  for (std::size_t i = 0; i < d.scores.size(); ++i)
    raw.data[i] = static_cast<std::uint8_t>(std::lround(d.scores[i] * 255.0));
  write_png(path, raw);
}

DiscrepancyImage OracleDiscrepancyProvider::provide(const ImageSample& sample) const {
  return oracle_discrepancy(sample, noise_, seed_, radius_);
}

DiscrepancyImage FileDiscrepancyProvider::provide(const ImageSample& sample) const {
  const auto path = dir_ / (sample.id + ".png");
  if (!std::filesystem::exists(path))
    throw DataError("no discrepancy image for sample " + sample.id + " at " + path.string());
  return load_discrepancy_png(path, sample.height);
}

}  // namespace clvae
