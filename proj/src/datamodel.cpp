#include "clvae/datamodel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clvae/errors.hpp"
#include "clvae/image_io.hpp"
#include "clvae/rng.hpp"

namespace clvae {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------ enums

std::string_view to_string(Label label) {
  return label == Label::Normal ? "normal" : "anomaly";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    default: return "unassigned";
  }
}

namespace {
std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}
}  // namespace

Label parse_label(std::string_view text) {
  const std::string t = lower(text);
  if (t == "normal") return Label::Normal;
  if (t == "anomaly") return Label::Anomaly;
  throw DataError("unknown label '" + std::string(text) + "' (expected normal|anomaly)");
}

Split parse_split(std::string_view text) {
  const std::string t = lower(text);
  if (t == "train") return Split::Train;
  if (t == "val" || t == "validation") return Split::Val;
  if (t == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(text) + "'");
}

std::string_view to_string(ObjectShape shape) {
  switch (shape) {
    case ObjectShape::Rectangle: return "rectangle";
    case ObjectShape::Ellipse: return "ellipse";
    case ObjectShape::Triangle: return "triangle";
    default: return "diamond";
  }
}

ObjectShape parse_shape(std::string_view text) {
  const std::string t = lower(text);
  if (t == "rectangle") return ObjectShape::Rectangle;
  if (t == "ellipse") return ObjectShape::Ellipse;
  if (t == "triangle") return ObjectShape::Triangle;
  if (t == "diamond") return ObjectShape::Diamond;
  throw ConfigError("unknown object shape '" + std::string(text) + "'");
}

// ------------------------------------------------------------------ samples

void LabelMap::validate() const {
  if (classes.size() != static_cast<std::size_t>(height) * width)
    throw DataError("label map size does not match its dimensions");
  for (int c : classes)
    if (!std::binary_search(vocabulary.begin(), vocabulary.end(), c))
      throw DataError("label map class " + std::to_string(c) + " not in vocabulary");
}

std::size_t ImageSample::mask_popcount() const {
  if (!anomaly_mask) return 0;
  return static_cast<std::size_t>(
      std::count_if(anomaly_mask->begin(), anomaly_mask->end(), [](auto v) { return v != 0; }));
}

void ImageSample::validate() const {
  if (id.empty()) throw DataError("sample without id");
  if (height <= 0 || width <= 0) throw DataError("sample " + id + ": empty image");
  if (channels != 3 && channels != 4)
    throw DataError("sample " + id + ": channel count must be 3 or 4");
  if (pixels.size() != static_cast<std::size_t>(height) * width * channels)
    throw DataError("sample " + id + ": pixel buffer does not match dimensions");
  for (float v : pixels)
    if (!(v >= 0.0f && v <= 1.0f))
      throw DataError("sample " + id + ": pixel value outside [0,1]");
  if (anomaly_mask) {
    if (anomaly_mask->size() != static_cast<std::size_t>(height) * width)
      throw DataError("sample " + id + ": mask does not match image dimensions");
    if (label == Label::Anomaly && mask_popcount() == 0)
      throw DataError("sample " + id + ": anomaly mask has no set pixel");
  }
}

// ------------------------------------------------------------------ rationals

Rational Rational::normalized() const {
  if (den == 0) throw ConfigError("rational with zero denominator");
  std::int64_t g = std::gcd(num < 0 ? -num : num, den < 0 ? -den : den);
  if (g == 0) g = 1;
  Rational r{num / g, den / g};
  if (r.den < 0) {
    r.num = -r.num;
    r.den = -r.den;
  }
  return r;
}

bool Rational::operator==(const Rational& o) const {
  const Rational a = normalized(), b = o.normalized();
  return a.num == b.num && a.den == b.den;
}

Rational operator+(const Rational& a, const Rational& b) {
  const __int128 num = static_cast<__int128>(a.num) * b.den + static_cast<__int128>(b.num) * a.den;
  const __int128 den = static_cast<__int128>(a.den) * b.den;
  __int128 x = num < 0 ? -num : num, y = den < 0 ? -den : den;
  while (y != 0) {
    const __int128 t = x % y;
    x = y;
    y = t;
  }
  if (x == 0) x = 1;
  return Rational{static_cast<std::int64_t>(num / x), static_cast<std::int64_t>(den / x)}
      .normalized();
}

Rational Rational::from_decimal(std::string_view text) {
  std::size_t i = 0;
  bool negative = false;
  if (i < text.size() && (text[i] == '-' || text[i] == '+')) negative = text[i++] == '-';
  std::int64_t num = 0, den = 1;
  bool digits = false;
  auto push_digit = [&](char c) {
    if (num > (INT64_MAX - 9) / 10) throw ConfigError("decimal too long: " + std::string(text));
    num = num * 10 + (c - '0');
    digits = true;
  };
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) push_digit(text[i++]);
  if (i < text.size() && text[i] == '.') {
    ++i;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
      push_digit(text[i++]);
      if (den > INT64_MAX / 10) throw ConfigError("decimal too long: " + std::string(text));
      den *= 10;
    }
  }
  if (!digits) throw ConfigError("not a decimal number: " + std::string(text));
  int exponent = 0;
  if (i < text.size() && (text[i] == 'e' || text[i] == 'E')) {
    ++i;
    auto [p, ec] = std::from_chars(text.data() + i + (text[i] == '+' ? 1 : 0),
                                   text.data() + text.size(), exponent);
    if (ec != std::errc() || p != text.data() + text.size())
      throw ConfigError("bad exponent in " + std::string(text));
    i = text.size();
  }
  if (i != text.size()) throw ConfigError("not a decimal number: " + std::string(text));
  for (; exponent > 0; --exponent) {
    if (num > INT64_MAX / 10) throw ConfigError("decimal out of range: " + std::string(text));
    num *= 10;
  }
  for (; exponent < 0; ++exponent) {
    if (den > INT64_MAX / 10) throw ConfigError("decimal out of range: " + std::string(text));
    den *= 10;
  }
  return Rational{negative ? -num : num, den}.normalized();
}

Rational Rational::from_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ConfigError("cannot format fraction");
  return from_decimal(std::string_view(buf, static_cast<std::size_t>(p - buf)));
}

void SplitSpec::validate() const {
  for (const Rational* r : {&train, &val, &test}) {
    const Rational n = r->normalized();
    if (n.num < 0) throw ConfigError("split fractions must be nonnegative");
  }
  if (!(train + val + test == Rational{1, 1}))
    throw ConfigError("split fractions must sum to exactly 1");
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == split; }));
}

double ClassFrequencyTable::pixel_frequency(int class_id) const {
  auto it = counts.find(class_id);
  if (it == counts.end() || total_pixels == 0) return 0.0;
  return static_cast<double>(it->second.pixels) / static_cast<double>(total_pixels);
}

double ClassFrequencyTable::instance_frequency(int class_id) const {
  auto it = counts.find(class_id);
  if (it == counts.end() || total_instances == 0) return 0.0;
  return static_cast<double>(it->second.instances) / static_cast<double>(total_instances);
}

// ------------------------------------------------------------------ manifest

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  DatasetManifest manifest;
  bool have_header = false;
  std::set<std::string> seen;
  std::vector<std::string> missing;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": parse error: " + e.what());
    }
    auto fail = [&](const std::string& msg) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + msg);
    };
    if (!j.is_object()) fail("expected a JSON object");
    if (!have_header) {
      if (!j.contains("manifest_version")) fail("missing {\"manifest_version\": 1} header");
      if (!j["manifest_version"].is_number_integer() || j["manifest_version"].get<int>() != 1)
        fail("unsupported manifest_version");
      manifest.version = 1;
      have_header = true;
      continue;
    }
    ManifestEntry e;
    try {
      if (!j.contains("image") || !j["image"].is_string()) fail("entry needs a string 'image'");
      if (!j.contains("label") || !j["label"].is_string()) fail("entry needs a string 'label'");
      e.image = j["image"].get<std::string>();
      e.label = parse_label(j["label"].get<std::string>());
      if (j.contains("mask") && !j["mask"].is_null()) {
        if (!j["mask"].is_string()) fail("'mask' must be a string or null");
        e.mask = fs::path(j["mask"].get<std::string>());
      }
      e.dataset = j.value("dataset", std::string{});
      if (j.contains("split") && !j["split"].is_null())
        e.split = parse_split(j["split"].get<std::string>());
      e.id = j.value("id", e.image.stem().string());
    } catch (const DataError& err) {
      if (std::string(err.what()).rfind(path.string(), 0) == 0) throw;
      fail(err.what());
    } catch (const json::exception& err) {
      fail(err.what());
    }
    const std::string key = e.image.lexically_normal().string();
    if (!seen.insert(key).second) fail("duplicate image path " + e.image.string());
    const fs::path img = e.image.is_absolute() ? e.image : base / e.image;
    if (!fs::exists(img)) missing.push_back(img.string());
    if (e.mask) {
      const fs::path m = e.mask->is_absolute() ? *e.mask : base / *e.mask;
      if (!fs::exists(m)) missing.push_back(m.string());
      e.mask = m;
    }
    e.image = img;
    manifest.entries.push_back(std::move(e));
  }
  if (!have_header) throw DataError(path.string() + ": empty manifest (no header line)");
  if (!missing.empty()) {
    std::string msg = "manifest references missing files:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << json{{"manifest_version", manifest.version}}.dump() << '\n';
  for (const auto& e : manifest.entries) {
    json j;
    j["image"] = e.image.string();
    j["mask"] = e.mask ? json(e.mask->string()) : json(nullptr);
    j["label"] = std::string(to_string(e.label));
    j["dataset"] = e.dataset;
    if (e.split) j["split"] = std::string(to_string(*e.split));
    if (!e.id.empty()) j["id"] = e.id;
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("failed writing manifest " + path.string());
}

std::vector<ImageSample> load_samples(const DatasetManifest& manifest, int size) {
  std::vector<ImageSample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const RawImage raw = read_png(e.image, 3);
    std::vector<float> px(raw.data.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = raw.data[i] / 255.0f;
    ImageSample s;
    s.id = e.id;
    s.label = e.label;
    s.dataset = e.dataset;
    s.split = e.split.value_or(Split::Unassigned);
    s.height = size;
    s.width = size;
    s.channels = 3;
    s.pixels = downsample_image(px, raw.height, raw.width, 3, size, size);
    if (e.mask) {
      const RawImage m = read_png(*e.mask, 1);
      if (m.width != raw.width || m.height != raw.height)
        throw DataError("mask size differs from image for " + e.id);
      std::vector<float> mf(m.data.size());
      for (std::size_t i = 0; i < mf.size(); ++i) mf[i] = m.data[i] != 0 ? 1.0f : 0.0f;
      const auto small = downsample_image(mf, m.height, m.width, 1, size, size);
      std::vector<std::uint8_t> mask(small.size());
      for (std::size_t i = 0; i < small.size(); ++i) mask[i] = small[i] >= 0.5f ? 1 : 0;
      // Keep at least the strongest pixel so a tiny anomaly survives downsampling.
      if (std::none_of(mask.begin(), mask.end(), [](auto v) { return v != 0; }) &&
          std::any_of(mf.begin(), mf.end(), [](float v) { return v > 0; })) {
        mask[static_cast<std::size_t>(std::max_element(small.begin(), small.end()) -
                                      small.begin())] = 1;
      }
      s.anomaly_mask = std::move(mask);
    }
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------------------ filtering & splits

std::vector<ImageSample> filter_by_anomaly_pixels(const std::vector<ImageSample>& samples,
                                                  std::size_t min_pixels) {
  std::vector<ImageSample> out;
  for (const auto& s : samples) {
    if (s.label == Label::Normal) {
      out.push_back(s);
      continue;
    }
    if (!s.anomaly_mask) throw DataError("anomaly sample " + s.id + " has no mask");
    if (s.mask_popcount() >= min_pixels) out.push_back(s);
  }
  return out;
}

DatasetSplits split_dataset(const std::vector<ImageSample>& samples, const SplitSpec& spec) {
  if (samples.empty()) throw DataError("split_dataset: no samples");
  spec.validate();
  const std::size_t n = samples.size();
  std::array<std::size_t, 3> sizes{};
  std::size_t assigned = 0;
  const std::array<Rational, 3> fracs{spec.train.normalized(), spec.val.normalized(),
                                      spec.test.normalized()};
  for (int k = 0; k < 3; ++k) {
    sizes[k] = static_cast<std::size_t>(static_cast<__int128>(n) * fracs[k].num / fracs[k].den);
    assigned += sizes[k];
  }
  for (int k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++sizes[k];

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  rng.shuffle(order.begin(), order.end());

  DatasetSplits out;
  std::size_t pos = 0;
  auto take = [&](std::vector<ImageSample>& dst, std::size_t count, Split tag) {
    dst.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      ImageSample s = samples[order[pos++]];
      s.split = tag;
      dst.push_back(std::move(s));
    }
  };
  take(out.train, sizes[0], Split::Train);
  take(out.val, sizes[1], Split::Val);
  take(out.test, sizes[2], Split::Test);
  return out;
}

// ------------------------------------------------------------------ resampling

std::vector<float> downsample_image(const std::vector<float>& pixels, int height, int width,
                                    int channels, int target_height, int target_width) {
  if (pixels.size() != static_cast<std::size_t>(height) * width * channels)
    throw ShapeError("downsample_image: buffer does not match dimensions");
  if (target_height <= 0 || target_width <= 0) throw ShapeError("downsample_image: empty target");
  if (target_height > height || target_width > width)
    throw DataError("downsample_image: upscaling from " + std::to_string(height) + "x" +
                    std::to_string(width) + " to " + std::to_string(target_height) + "x" +
                    std::to_string(target_width) + " is not supported");
  if (target_height == height && target_width == width) return pixels;

  const double sy = static_cast<double>(height) / target_height;
  const double sx = static_cast<double>(width) / target_width;
  std::vector<float> out(static_cast<std::size_t>(target_height) * target_width * channels);
  for (int oy = 0; oy < target_height; ++oy) {
    const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, height - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < target_width; ++ox) {
      const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < channels; ++c) {
        auto at = [&](int y, int x) {
          return static_cast<double>(
              pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]);
        };
        const double top = (1.0 - wx) * at(y0, x0) + wx * at(y0, x1);
        const double bot = (1.0 - wx) * at(y1, x0) + wx * at(y1, x1);
        out[(static_cast<std::size_t>(oy) * target_width + ox) * channels + c] =
            static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

// ------------------------------------------------------------------ synthetic scenes

SynthSceneSpec SynthSceneSpec::defaults() {
  SynthSceneSpec s;
  s.normal_objects = {
      {2, "car", ObjectShape::Rectangle, {0.15f, 0.20f, 0.55f}, 0.12, 0.22, 0.45},
      {3, "tree", ObjectShape::Ellipse, {0.12f, 0.42f, 0.14f}, 0.12, 0.25, 0.30},
      {4, "sign", ObjectShape::Rectangle, {0.85f, 0.75f, 0.15f}, 0.05, 0.09, 0.15},
      {5, "bus", ObjectShape::Rectangle, {0.70f, 0.30f, 0.10f}, 0.20, 0.30, 0.10},
  };
  s.anomaly_objects = {
      {6, "cone", ObjectShape::Triangle, {0.95f, 0.10f, 0.85f}, 0.0, 0.0, 1.0},
      {7, "debris", ObjectShape::Diamond, {0.10f, 0.90f, 0.90f}, 0.0, 0.0, 1.0},
  };
  return s;
}

void SynthSceneSpec::validate() const {
  if (image_size < 4) throw ConfigError("synthetic image size must be at least 4");
  if (!(horizon_min >= 0 && horizon_min <= horizon_max && horizon_max < 1))
    throw ConfigError("horizon range must satisfy 0 <= min <= max < 1");
  if (min_objects < 0 || min_objects > max_objects)
    throw ConfigError("object count range invalid");
  if (normal_objects.empty()) throw ConfigError("normal object vocabulary is empty");
  if (!(anomaly_area_min > 0 && anomaly_area_min <= anomaly_area_max && anomaly_area_max < 1))
    throw ConfigError("anomaly area fraction range must lie in (0,1) with min <= max");
  double wsum = 0;
  std::set<int> ids{kSkyClass, kRoadClass};
  for (const auto& o : normal_objects) {
    if (o.weight < 0) throw ConfigError("negative frequency weight for " + o.name);
    if (!(o.min_size > 0 && o.min_size <= o.max_size && o.max_size <= 1))
      throw ConfigError("bad size range for " + o.name);
    wsum += o.weight;
    if (!ids.insert(o.class_id).second) throw ConfigError("duplicate class id " + o.name);
  }
  if (wsum <= 0) throw ConfigError("normal frequency weights sum to zero");
  for (const auto& a : anomaly_objects) {
    if (!ids.insert(a.class_id).second) throw ConfigError("duplicate class id " + a.name);
    for (const auto& o : normal_objects) {
      if (a.shape == o.shape)
        throw ConfigError("anomaly shape of " + a.name + " also used by normal class " + o.name);
      float dist = 0;
      for (int c = 0; c < 3; ++c) dist = std::max(dist, std::abs(a.color[c] - o.color[c]));
      if (dist <= 2 * color_jitter)
        throw ConfigError("anomaly color of " + a.name + " overlaps normal class " + o.name);
    }
  }
}

namespace {

struct Canvas {
  int size;
  std::vector<float> rgb;
  std::vector<int> classes;
};

bool inside(ObjectShape shape, double dx, double dy, double half_w, double half_h) {
  switch (shape) {
    case ObjectShape::Rectangle:
      return std::abs(dx) <= half_w && std::abs(dy) <= half_h;
    case ObjectShape::Ellipse:
      return (dx * dx) / (half_w * half_w) + (dy * dy) / (half_h * half_h) <= 1.0;
    case ObjectShape::Triangle: {
      const double v = (dy + half_h) / (2 * half_h);  // 0 at apex, 1 at base
      return v >= 0 && v <= 1 && std::abs(dx) <= v * half_w;
    }
    case ObjectShape::Diamond:
      return std::abs(dx) / half_w + std::abs(dy) / half_h <= 1.0;
  }
  return false;
}

// Paints a shape; returns the painted pixel indices.
std::vector<std::size_t> paint(Canvas& canvas, ObjectShape shape, double cx, double cy,
                               double half_w, double half_h, const std::array<float, 3>& color,
                               int class_id, double noise, Rng& rng) {
  std::vector<std::size_t> painted;
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - half_h)));
  const int y1 = std::min(canvas.size - 1, static_cast<int>(std::ceil(cy + half_h)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - half_w)));
  const int x1 = std::min(canvas.size - 1, static_cast<int>(std::ceil(cx + half_w)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (!inside(shape, x + 0.5 - cx, y + 0.5 - cy, half_w, half_h)) continue;
      const std::size_t idx = static_cast<std::size_t>(y) * canvas.size + x;
      for (int c = 0; c < 3; ++c)
        canvas.rgb[idx * 3 + c] = static_cast<float>(color[c] + noise * rng.normal());
      canvas.classes[idx] = class_id;
      painted.push_back(idx);
    }
  return painted;
}

std::array<float, 3> jittered(const std::array<float, 3>& base, double jitter, double brightness,
                              Rng& rng) {
  std::array<float, 3> c{};
  for (int k = 0; k < 3; ++k)
    c[k] = static_cast<float>((base[k] + rng.uniform(-jitter, jitter)) * brightness);
  return c;
}

ImageSample render_scene(const SynthSceneSpec& spec, Rng& rng, bool with_anomaly,
                         const std::string& id) {
  const int S = spec.image_size;
  Canvas canvas{S, std::vector<float>(static_cast<std::size_t>(S) * S * 3),
                std::vector<int>(static_cast<std::size_t>(S) * S)};
  const double horizon = rng.uniform(spec.horizon_min, spec.horizon_max) * S;
  const double brightness = 1.0 + rng.uniform(-spec.brightness_jitter, spec.brightness_jitter);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * S + x;
      const bool sky = y + 0.5 < horizon;
      const double shade = sky ? 1.1 - 0.2 * (y / std::max(horizon, 1.0))
                               : 0.9 + 0.2 * ((y - horizon) / std::max(S - horizon, 1.0));
      const auto& base = sky ? spec.sky_color : spec.road_color;
      for (int c = 0; c < 3; ++c)
        canvas.rgb[idx * 3 + c] = static_cast<float>(base[c] * shade * brightness +
                                                     spec.texture_noise * rng.normal());
      canvas.classes[idx] = sky ? SynthSceneSpec::kSkyClass : SynthSceneSpec::kRoadClass;
    }

  ImageSample sample;
  sample.id = id;
  sample.height = S;
  sample.width = S;
  sample.channels = 3;

  double wsum = 0;
  for (const auto& o : spec.normal_objects) wsum += o.weight;
  const int n_objects = rng.uniform_int(spec.min_objects, spec.max_objects);
  for (int k = 0; k < n_objects; ++k) {
    double u = rng.uniform() * wsum;
    std::size_t ci = 0;
    while (ci + 1 < spec.normal_objects.size() && u >= spec.normal_objects[ci].weight) {
      u -= spec.normal_objects[ci].weight;
      ++ci;
    }
    const ObjectClass& oc = spec.normal_objects[ci];
    const double side = rng.uniform(oc.min_size, oc.max_size) * S;
    const double aspect = rng.uniform(0.6, 1.2);
    const double cx = rng.uniform(0.0, S);
    const double cy = rng.uniform(horizon, S);
    paint(canvas, oc.shape, cx, cy, side / 2, side * aspect / 2,
          jittered(oc.color, spec.color_jitter, brightness, rng), oc.class_id,
          spec.texture_noise * 0.5, rng);
    sample.object_classes.push_back(oc.class_id);
  }

  if (with_anomaly) {
    if (spec.anomaly_objects.empty()) throw ConfigError("anomaly object vocabulary is empty");
    double asum = 0;
    for (const auto& o : spec.anomaly_objects) asum += std::max(o.weight, 0.0);
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      double u = rng.uniform() * asum;
      std::size_t ai = 0;
      while (ai + 1 < spec.anomaly_objects.size() && u >= spec.anomaly_objects[ai].weight) {
        u -= spec.anomaly_objects[ai].weight;
        ++ai;
      }
      const ObjectClass& ac = spec.anomaly_objects[ai];
      const double area = rng.uniform(spec.anomaly_area_min, spec.anomaly_area_max) * S * S;
      double side = 0;
      switch (ac.shape) {
        case ObjectShape::Rectangle: side = std::sqrt(area); break;
        case ObjectShape::Ellipse: side = std::sqrt(4.0 * area / M_PI); break;
        default: side = std::sqrt(2.0 * area); break;
      }
      if (side >= S) continue;
      const double half = side / 2;
      const double cx = rng.uniform(half, S - half);
      const double cy = rng.uniform(std::max(half, std::min(horizon, S - half)), S - half);
      Canvas trial = canvas;
      const auto painted =
          paint(trial, ac.shape, cx, cy, half, half,
                jittered(ac.color, spec.color_jitter, brightness, rng), ac.class_id,
                spec.texture_noise * 0.5, rng);
      const double frac = static_cast<double>(painted.size()) / (static_cast<double>(S) * S);
      if (frac < spec.anomaly_area_min || frac > spec.anomaly_area_max) continue;
      canvas = std::move(trial);
      std::vector<std::uint8_t> mask(static_cast<std::size_t>(S) * S, 0);
      for (auto idx : painted) mask[idx] = 1;
      sample.anomaly_mask = std::move(mask);
      sample.object_classes.push_back(ac.class_id);
      placed = true;
    }
    if (!placed)
      throw ConfigError("cannot place an anomaly within the configured area fraction range");
    sample.label = Label::Anomaly;
  } else {
    sample.anomaly_mask = std::vector<std::uint8_t>(static_cast<std::size_t>(S) * S, 0);
  }

  sample.pixels.resize(canvas.rgb.size());
  for (std::size_t i = 0; i < canvas.rgb.size(); ++i)
    sample.pixels[i] = std::clamp(canvas.rgb[i], 0.0f, 1.0f);

  LabelMap sem;
  sem.height = S;
  sem.width = S;
  sem.classes = std::move(canvas.classes);
  sem.vocabulary = {SynthSceneSpec::kSkyClass, SynthSceneSpec::kRoadClass};
  for (const auto& o : spec.normal_objects) sem.vocabulary.push_back(o.class_id);
  for (const auto& o : spec.anomaly_objects) sem.vocabulary.push_back(o.class_id);
  std::sort(sem.vocabulary.begin(), sem.vocabulary.end());
  sample.semantics = std::move(sem);
  return sample;
}

}  // namespace

std::vector<ImageSample> generate_synthetic_dataset(const SynthSceneSpec& spec, int n_normal,
                                                    int n_anomaly) {
  if (n_normal < 0 || n_anomaly < 0) throw ConfigError("sample counts must be nonnegative");
  spec.validate();
  std::vector<ImageSample> out;
  out.reserve(static_cast<std::size_t>(n_normal) + n_anomaly);
  char id[32];
  for (int i = 0; i < n_normal; ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    std::snprintf(id, sizeof id, "normal_%05d", i);
    ImageSample s = render_scene(spec, rng, false, id);
    s.dataset = "synthetic_normal";
    s.validate();
    out.push_back(std::move(s));
  }
  for (int i = 0; i < n_anomaly; ++i) {
    Rng rng(derive_seed(spec.seed, (1ULL << 40) + static_cast<std::uint64_t>(i)));
    std::snprintf(id, sizeof id, "anomaly_%05d", i);
    ImageSample s = render_scene(spec, rng, true, id);
    s.dataset = "synthetic_anomaly";
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------------------ class frequencies

std::pair<std::vector<int>, int> connected_components(const LabelMap& map) {
  const int H = map.height, W = map.width;
  std::vector<int> comp(static_cast<std::size_t>(H) * W, -1);
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < comp.size(); ++start) {
    if (comp[start] >= 0) continue;
    const int cls = map.classes[start];
    comp[start] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      const int y = static_cast<int>(idx / W), x = static_cast<int>(idx % W);
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= H || nx[k] < 0 || nx[k] >= W) continue;
        const std::size_t nidx = static_cast<std::size_t>(ny[k]) * W + nx[k];
        if (comp[nidx] >= 0 || map.classes[nidx] != cls) continue;
        comp[nidx] = next;
        stack.push_back(nidx);
      }
    }
    ++next;
  }
  return {std::move(comp), next};
}

ClassFrequencyTable compute_class_frequencies(const std::vector<LabelMap>& label_maps) {
  ClassFrequencyTable table;
  for (const auto& map : label_maps) {
    for (int v : map.vocabulary) table.counts[v];
    for (int c : map.classes) ++table.counts[c].pixels;
    const auto [comp, n] = connected_components(map);
    std::vector<int> comp_class(static_cast<std::size_t>(n), -1);
    for (std::size_t i = 0; i < comp.size(); ++i) comp_class[comp[i]] = map.classes[i];
    for (int c : comp_class) ++table.counts[c].instances;
  }
  for (const auto& [cls, cnt] : table.counts) {
    table.total_pixels += cnt.pixels;
    table.total_instances += cnt.instances;
  }
  return table;
}

}  // namespace clvae
