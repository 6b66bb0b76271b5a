#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "clvae/datamodel.hpp"
#include "clvae/errors.hpp"
#include "clvae/rng.hpp"
#include "test_util.hpp"

using namespace clvae;

namespace {

ImageSample make_sample(const std::string& id, Label label, int set_pixels, int size = 8) {
  ImageSample s;
  s.id = id;
  s.height = size;
  s.width = size;
  s.pixels.assign(static_cast<std::size_t>(size) * size * 3, 0.5f);
  s.label = label;
  if (label == Label::Anomaly || set_pixels > 0) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(size) * size, 0);
    for (int i = 0; i < set_pixels && i < size * size; ++i) m[static_cast<std::size_t>(i)] = 1;
    s.anomaly_mask = m;
  }
  return s;
}

// Large mask without the nonempty check getting in the way.
ImageSample big_mask_sample(const std::string& id, std::size_t set_pixels) {
  ImageSample s;
  s.id = id;
  s.height = 100;
  s.width = 100;
  s.pixels.assign(100 * 100 * 3, 0.0f);
  s.label = Label::Anomaly;
  std::vector<std::uint8_t> m(100 * 100, 0);
  std::fill_n(m.begin(), set_pixels, 1);
  s.anomaly_mask = m;
  return s;
}

}  // namespace

TEST_CASE("labels and splits parse case-insensitively") {
  CHECK(parse_label("Normal") == Label::Normal);
  CHECK(parse_label("ANOMALY") == Label::Anomaly);
  CHECK_THROWS_AS(parse_label("ood"), DataError);
  CHECK(parse_split("val") == Split::Val);
  CHECK(to_string(Split::Test) == "test");
}

TEST_CASE("rationals from decimals are exact") {
  CHECK(Rational::from_decimal("0.7") == Rational{7, 10});
  CHECK(Rational::from_double(0.2) == Rational{1, 5});
  CHECK(Rational::from_double(0.1) + Rational::from_double(0.2) + Rational::from_double(0.7) ==
        Rational{1, 1});
  SplitSpec bad;
  bad.train = {6, 10};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  SplitSpec neg{{-1, 10}, {6, 10}, {5, 10}, 0};
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("load_manifest") {
  testutil::TempDir dir("manifest");
  const auto& d = dir.path();

  SUBCASE("header only gives an empty manifest") {
    testutil::write_file(d / "m.jsonl", "{\"manifest_version\": 1}\n");
    CHECK(load_manifest(d / "m.jsonl").entries.empty());
  }

  SUBCASE("duplicate path is named") {
    testutil::write_rgb_png(d / "a.png", 2, 2, 10);
    testutil::write_rgb_png(d / "b.png", 2, 2, 10);
    testutil::write_file(d / "m.jsonl",
                         "{\"manifest_version\": 1}\n"
                         "{\"image\":\"a.png\",\"mask\":null,\"label\":\"normal\",\"dataset\":\"x\"}\n"
                         "{\"image\":\"b.png\",\"mask\":null,\"label\":\"normal\",\"dataset\":\"x\"}\n"
                         "{\"image\":\"a.png\",\"mask\":null,\"label\":\"anomaly\",\"dataset\":\"x\"}\n");
    try {
      load_manifest(d / "m.jsonl");
      FAIL("expected an error");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("duplicate") != std::string::npos);
      CHECK(msg.find("a.png") != std::string::npos);
      CHECK(msg.find(":4:") != std::string::npos);
    }
  }

  SUBCASE("parse errors carry the line number") {
    testutil::write_file(d / "m.jsonl", "{\"manifest_version\": 1}\n{\"image\": \n");
    try {
      load_manifest(d / "m.jsonl");
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
  }

  SUBCASE("all missing files are listed") {
    testutil::write_file(d / "m.jsonl",
                         "{\"manifest_version\": 1}\n"
                         "{\"image\":\"gone1.png\",\"mask\":\"gone2.png\",\"label\":\"anomaly\",\"dataset\":\"x\"}\n"
                         "{\"image\":\"gone3.png\",\"mask\":null,\"label\":\"normal\",\"dataset\":\"x\"}\n");
    try {
      load_manifest(d / "m.jsonl");
      FAIL("expected an error");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      for (const char* f : {"gone1.png", "gone2.png", "gone3.png"})
        CHECK(msg.find(f) != std::string::npos);
    }
  }

  SUBCASE("unknown labels are rejected") {
    testutil::write_rgb_png(d / "a.png", 2, 2, 10);
    testutil::write_file(d / "m.jsonl",
                         "{\"manifest_version\": 1}\n"
                         "{\"image\":\"a.png\",\"mask\":null,\"label\":\"weird\",\"dataset\":\"x\"}\n");
    CHECK_THROWS_AS(load_manifest(d / "m.jsonl"), DataError);
  }

  SUBCASE("172 / 99 / 64 split counts survive a round trip") {
    DatasetManifest m;
    std::filesystem::create_directories(d / "img");
    int k = 0;
    for (auto [split, count] : {std::pair{Split::Train, 172}, {Split::Val, 99}, {Split::Test, 64}})
      for (int i = 0; i < count; ++i, ++k) {
        const std::string name = "img/" + std::to_string(k) + ".png";
        testutil::write_rgb_png(d / name, 1, 1, 0);
        testutil::write_gray_png(d / ("img/" + std::to_string(k) + "_m.png"), 1, 1, 255);
        ManifestEntry e;
        e.image = name;
        e.mask = "img/" + std::to_string(k) + "_m.png";
        e.label = Label::Anomaly;
        e.dataset = "lost_and_found";
        e.split = split;
        m.entries.push_back(e);
      }
    write_manifest(m, d / "m.jsonl");
    const DatasetManifest loaded = load_manifest(d / "m.jsonl");
    CHECK(loaded.entries.size() == 335);
    CHECK(loaded.count(Split::Train) == 172);
    CHECK(loaded.count(Split::Val) == 99);
    CHECK(loaded.count(Split::Test) == 64);
  }
}

TEST_CASE("load_samples downsamples and reads masks") {
  testutil::TempDir dir("samples");
  const auto& d = dir.path();
  testutil::write_rgb_png(d / "a.png", 16, 16, 255);
  testutil::write_gray_png(d / "a_mask.png", 16, 16, 200);
  testutil::write_file(d / "m.jsonl",
                       "{\"manifest_version\": 1}\n"
                       "{\"image\":\"a.png\",\"mask\":\"a_mask.png\",\"label\":\"anomaly\",\"dataset\":\"x\"}\n");
  const auto samples = load_samples(load_manifest(d / "m.jsonl"), 8);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].height == 8);
  CHECK(samples[0].pixels.size() == 8 * 8 * 3);
  CHECK(samples[0].px(3, 3, 1) == doctest::Approx(1.0));
  CHECK(samples[0].mask_popcount() == 64);
  CHECK(samples[0].id == "a");
}

TEST_CASE("filter_by_anomaly_pixels") {
  SUBCASE("empty mask removed, boundary kept") {
    ImageSample empty = big_mask_sample("empty", 0);
    ImageSample exact = big_mask_sample("exact", 3000);
    ImageSample below = big_mask_sample("below", 2999);
    const auto out = filter_by_anomaly_pixels({empty, exact, below}, 3000);
    REQUIRE(out.size() == 1);
    CHECK(out[0].id == "exact");
  }
  SUBCASE("normal samples pass through") {
    const auto out = filter_by_anomaly_pixels({make_sample("n", Label::Normal, 0)}, 3000);
    CHECK(out.size() == 1);
  }
  SUBCASE("anomaly without mask names the sample") {
    ImageSample s = make_sample("lonely", Label::Anomaly, 3);
    s.anomaly_mask.reset();
    try {
      filter_by_anomaly_pixels({s}, 1);
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("lonely") != std::string::npos);
    }
  }
  SUBCASE("matches a brute-force popcount filter") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<ImageSample> samples;
      for (int i = 0; i < 10; ++i) {
        ImageSample s = make_sample("s" + std::to_string(i),
                                    rng.uniform() < 0.3 ? Label::Normal : Label::Anomaly, 1);
        for (auto& v : *s.anomaly_mask) v = rng.uniform() < 0.4 ? 1 : 0;
        samples.push_back(s);
      }
      const std::size_t k = rng.below(64);
      std::vector<std::string> expect;
      for (const auto& s : samples) {
        std::size_t count = 0;
        for (auto v : *s.anomaly_mask) count += v != 0;
        if (s.label == Label::Normal || count >= k) expect.push_back(s.id);
      }
      std::vector<std::string> got;
      for (const auto& s : filter_by_anomaly_pixels(samples, k)) got.push_back(s.id);
      CHECK(got == expect);
    }
  }
}

TEST_CASE("split_dataset") {
  auto many = [](int n) {
    std::vector<ImageSample> v;
    for (int i = 0; i < n; ++i) v.push_back(make_sample("s" + std::to_string(i), Label::Normal, 0));
    return v;
  };
  SplitSpec spec;
  spec.seed = 5;

  SUBCASE("110 samples split 77 / 22 / 11") {
    const auto s = split_dataset(many(110), spec);
    CHECK(s.train.size() == 77);
    CHECK(s.val.size() == 22);
    CHECK(s.test.size() == 11);
  }
  SUBCASE("one sample goes to train") {
    const auto s = split_dataset(many(1), spec);
    CHECK(s.train.size() == 1);
    CHECK(s.val.empty());
    CHECK(s.test.empty());
  }
  SUBCASE("same seed gives the same partition") {
    const auto a = split_dataset(many(20), spec);
    const auto b = split_dataset(many(20), spec);
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].id == b.train[i].id);
    for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(a.test[i].id == b.test[i].id);
  }
  SUBCASE("partition property for n in [1, 200]") {
    for (int n = 1; n <= 200; ++n) {
      const auto s = split_dataset(many(n), spec);
      std::array<std::size_t, 3> expect{static_cast<std::size_t>(n * 7 / 10),
                                        static_cast<std::size_t>(n * 2 / 10),
                                        static_cast<std::size_t>(n / 10)};
      std::size_t rem = static_cast<std::size_t>(n) - expect[0] - expect[1] - expect[2];
      for (int k = 0; rem > 0; k = (k + 1) % 3, --rem) ++expect[k];
      REQUIRE(s.train.size() == expect[0]);
      REQUIRE(s.val.size() == expect[1]);
      REQUIRE(s.test.size() == expect[2]);
      std::set<std::string> ids;
      for (const auto* part : {&s.train, &s.val, &s.test})
        for (const auto& x : *part) ids.insert(x.id);
      REQUIRE(ids.size() == static_cast<std::size_t>(n));
    }
  }
  SUBCASE("fractions must sum to one") {
    SplitSpec bad = spec;
    bad.test = {2, 10};
    CHECK_THROWS_AS(split_dataset(many(10), bad), ConfigError);
  }
  SUBCASE("empty input is rejected") { CHECK_THROWS_AS(split_dataset({}, spec), DataError); }
}

TEST_CASE("downsample_image") {
  SUBCASE("constant stays constant") {
    std::vector<float> px(10 * 12 * 3, 0.37f);
    for (float v : downsample_image(px, 10, 12, 3, 4, 5)) CHECK(v == doctest::Approx(0.37f));
  }
  SUBCASE("same size is the identity") {
    Rng rng(3);
    std::vector<float> px(256 * 256 * 3);
    for (auto& v : px) v = static_cast<float>(rng.uniform());
    CHECK(downsample_image(px, 256, 256, 3, 256, 256) == px);
  }
  SUBCASE("checkerboard 4x4 to 2x2 averages each block") {
    std::vector<float> px(16);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) px[static_cast<std::size_t>(y * 4 + x)] = static_cast<float>((x + y) % 2);
    const auto out = downsample_image(px, 4, 4, 1, 2, 2);
    for (float v : out) CHECK(v == doctest::Approx(0.5f));
    // Ramp 0..15 row-major: block means are 2.5, 4.5, 10.5, 12.5.
    std::vector<float> ramp(16);
    for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = static_cast<float>(i);
    const auto r = downsample_image(ramp, 4, 4, 1, 2, 2);
    CHECK(r[0] == doctest::Approx(2.5f));
    CHECK(r[1] == doctest::Approx(4.5f));
    CHECK(r[2] == doctest::Approx(10.5f));
    CHECK(r[3] == doctest::Approx(12.5f));
  }
  SUBCASE("output stays within the input range") {
    Rng rng(4);
    std::vector<float> px(37 * 29 * 3);
    for (auto& v : px) v = static_cast<float>(rng.uniform(0.2, 0.7));
    const auto [lo, hi] = std::minmax_element(px.begin(), px.end());
    for (float v : downsample_image(px, 37, 29, 3, 11, 7)) {
      CHECK(v >= *lo);
      CHECK(v <= *hi);
    }
  }
  SUBCASE("upscaling is rejected") {
    std::vector<float> px(4 * 4, 0.0f);
    CHECK_THROWS_AS(downsample_image(px, 4, 4, 1, 8, 8), DataError);
  }
}

TEST_CASE("generate_synthetic_dataset") {
  SynthSceneSpec spec = SynthSceneSpec::defaults();
  spec.image_size = 32;
  spec.seed = 9;

  SUBCASE("empty request") { CHECK(generate_synthetic_dataset(spec, 0, 0).empty()); }

  SUBCASE("anomaly masks are nonempty and inside the area bounds") {
    const auto samples = generate_synthetic_dataset(spec, 0, 5);
    REQUIRE(samples.size() == 5);
    for (const auto& s : samples) {
      CHECK(s.label == Label::Anomaly);
      REQUIRE(s.anomaly_mask);
      const double frac = static_cast<double>(s.mask_popcount()) / (32.0 * 32.0);
      CHECK(frac > 0);
      CHECK(frac >= spec.anomaly_area_min);
      CHECK(frac <= spec.anomaly_area_max);
    }
  }

  SUBCASE("object classes follow the frequency weights") {
    const auto samples = generate_synthetic_dataset(spec, 1000, 0);
    std::map<int, double> count;
    double total = 0;
    for (const auto& s : samples)
      for (int c : s.object_classes) {
        count[c] += 1;
        total += 1;
      }
    double wsum = 0;
    for (const auto& o : spec.normal_objects) wsum += o.weight;
    for (const auto& o : spec.normal_objects) {
      const double p = o.weight / wsum;
      const double sigma = std::sqrt(total * p * (1 - p));
      CHECK(std::abs(count[o.class_id] - total * p) <= 3 * sigma);
    }
  }

  SUBCASE("equal seeds are bit-identical, different seeds differ") {
    const auto a = generate_synthetic_dataset(spec, 50, 50);
    const auto b = generate_synthetic_dataset(spec, 50, 50);
    SynthSceneSpec other = spec;
    other.seed = 10;
    const auto c = generate_synthetic_dataset(other, 50, 50);
    std::set<std::vector<float>> seen;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].pixels == b[i].pixels);
      CHECK(a[i].anomaly_mask == b[i].anomaly_mask);
      seen.insert(a[i].pixels);
      seen.insert(c[i].pixels);
    }
    CHECK(seen.size() == 200);
  }

  SUBCASE("every sample satisfies its invariants") {
    for (const auto& s : generate_synthetic_dataset(spec, 10, 10)) {
      CHECK_NOTHROW(s.validate());
      CHECK(s.channels == 3);
      if (s.label == Label::Normal) CHECK(s.mask_popcount() == 0);
    }
  }

  SUBCASE("overlapping vocabularies are rejected") {
    SynthSceneSpec bad = spec;
    bad.anomaly_objects[0].shape = bad.normal_objects[0].shape;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("compute_class_frequencies") {
  SUBCASE("uniform map") {
    LabelMap m{5, 7, std::vector<int>(35, 3), {3}};
    const auto t = compute_class_frequencies({m});
    CHECK(t.counts.at(3).pixels == 35);
    CHECK(t.counts.at(3).instances == 1);
    CHECK(t.total_pixels == 35);
    CHECK(t.total_instances == 1);
  }
  SUBCASE("two disjoint blobs count as two instances") {
    // 0 0 0 0 0
    // 0 5 0 5 5
    // 0 5 0 0 0
    // 0 0 0 5 0   <- touches the right blob only diagonally
    LabelMap m{4, 5, {0, 0, 0, 0, 0, 0, 5, 0, 5, 5, 0, 5, 0, 0, 0, 0, 0, 0, 5, 0}, {0, 5}};
    const auto t = compute_class_frequencies({m});
    CHECK(t.counts.at(5).instances == 3);
    CHECK(t.counts.at(5).pixels == 5);
    CHECK(t.counts.at(0).instances == 1);
    LabelMap two{3, 5, {5, 5, 0, 5, 5, 5, 5, 0, 5, 5, 0, 0, 0, 0, 0}, {0, 5}};
    CHECK(compute_class_frequencies({two}).counts.at(5).instances == 2);
  }
  SUBCASE("empty list") {
    const auto t = compute_class_frequencies({});
    CHECK(t.total_pixels == 0);
    CHECK(t.total_instances == 0);
    for (const auto& [c, v] : t.counts) {
      CHECK(v.pixels == 0);
      CHECK(v.instances == 0);
    }
  }
  SUBCASE("totals equal the sums") {
    LabelMap m{2, 3, {1, 2, 2, 1, 3, 3}, {1, 2, 3}};
    const auto t = compute_class_frequencies({m, m});
    std::uint64_t px = 0, inst = 0;
    for (const auto& [c, v] : t.counts) {
      px += v.pixels;
      inst += v.instances;
    }
    CHECK(px == t.total_pixels);
    CHECK(inst == t.total_instances);
    CHECK(t.pixel_frequency(1) == doctest::Approx(4.0 / 12.0));
  }
}

TEST_CASE("ImageSample validation") {
  ImageSample s = make_sample("x", Label::Normal, 0);
  CHECK_NOTHROW(s.validate());
  s.pixels[0] = 1.5f;
  CHECK_THROWS_AS(s.validate(), DataError);
  ImageSample a = make_sample("y", Label::Anomaly, 0);
  CHECK_THROWS_AS(a.validate(), DataError);
  ImageSample c = make_sample("z", Label::Normal, 0);
  c.channels = 5;
  CHECK_THROWS_AS(c.validate(), DataError);
}
