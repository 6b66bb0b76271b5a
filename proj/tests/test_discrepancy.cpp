#include <doctest.h>

#include <set>

#include "clvae/discrepancy.hpp"
#include "clvae/errors.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"
#include "test_util.hpp"

using namespace clvae;

namespace {

ImageSample blank(int size, Label label) {
  ImageSample s;
  s.id = label == Label::Anomaly ? "anom" : "norm";
  s.height = s.width = size;
  s.pixels.assign(static_cast<std::size_t>(size) * size * 3, 0.5f);
  s.label = label;
  if (label == Label::Anomaly) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(size) * size, 0);
    for (int y = 2; y < 6; ++y)
      for (int x = 2; x < 6; ++x) m[y * size + x] = 1;
    s.anomaly_mask = m;
  }
  return s;
}

}  // namespace

TEST_CASE("draw_replacement_class") {
  Rng rng(1);
  const std::vector<int> vocab{0, 1, 2};
  for (int i = 0; i < 200; ++i) CHECK(draw_replacement_class(0, vocab, {1, 1, 1}, rng) != 0);
  for (int i = 0; i < 200; ++i) CHECK(draw_replacement_class(0, vocab, {5, 0, 1}, rng) == 2);
  CHECK_THROWS_AS(draw_replacement_class(0, vocab, {1, 0, 0}, rng), DataError);
  CHECK_THROWS_AS(draw_replacement_class(0, vocab, {1, 1}, rng), DataError);

  SUBCASE("renormalized weights pass a chi-square test") {
    std::vector<long> obs(3, 0);
    for (int i = 0; i < 10000; ++i) ++obs[draw_replacement_class(scenario::kA, vocab, {0.7, 0.25, 0.05}, rng)];
    CHECK(oracle::chi_square_p(obs, scenario::frequency_target(scenario::kA)) > 0.01);
  }
}

TEST_CASE("label replacement samplers") {
  const LabelMap map = scenario::abc_map();
  const auto freqs = scenario::abc_frequencies();
  auto freq = [&](std::uint64_t s) { return frequency_based_label_replacement(map, freqs, 16, s).second; };
  auto unif = [&](std::uint64_t s) { return random_label_replacement(map, 16, s).second; };
  const auto tf = scenario::tally_replacements(freq, 625);
  const auto tu = scenario::tally_replacements(unif, 625);
  CHECK(tf.total_for(scenario::kA) + tf.total_for(scenario::kB) == 10000);

  for (int orig : {scenario::kA, scenario::kB}) {
    const std::vector<long> of(tf.counts[orig], tf.counts[orig] + 3);
    const std::vector<long> ou(tu.counts[orig], tu.counts[orig] + 3);
    CHECK(oracle::chi_square_p(of, scenario::frequency_target(orig)) > 0.01);
    CHECK(oracle::chi_square_p(ou, scenario::uniform_target(orig)) > 0.01);
  }
  const long c_freq = tf.counts[0][scenario::kC] + tf.counts[1][scenario::kC];
  const long c_unif = tu.counts[0][scenario::kC] + tu.counts[1][scenario::kC];
  CHECK(c_freq < c_unif);

  SUBCASE("the output map carries the plan") {
    const auto [out, plan] = frequency_based_label_replacement(map, freqs, 3, 42);
    REQUIRE(plan.entries.size() == 3);
    const auto [comp, count] = connected_components(map);
    CHECK(count == 16);
    std::set<int> touched;
    for (const auto& e : plan.entries) {
      CHECK(e.replacement_class != e.original_class);
      touched.insert(e.instance);
    }
    CHECK(touched.size() == 3);
    for (std::size_t i = 0; i < comp.size(); ++i) {
      bool replaced = false;
      for (const auto& e : plan.entries)
        if (e.instance == comp[i]) {
          CHECK(out.classes[i] == e.replacement_class);
          replaced = true;
        }
      if (!replaced) CHECK(out.classes[i] == map.classes[i]);
    }
    CHECK(frequency_based_label_replacement(map, freqs, 3, 42).first.classes == out.classes);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(random_label_replacement(map, 17, 1), DataError);
    ReplacementOptions big;
    big.min_instance_area = 65;
    CHECK_THROWS_AS(random_label_replacement(map, 1, 1, big), DataError);
    ClassFrequencyTable partial = freqs;
    partial.counts.erase(scenario::kC);
    CHECK_THROWS_AS(frequency_based_label_replacement(map, partial, 1, 1), DataError);
  }
}

TEST_CASE("oracle discrepancy") {
  const ImageSample n = blank(16, Label::Normal);
  const ImageSample a = blank(16, Label::Anomaly);
  SUBCASE("noise-free normal is all zero") {
    const auto d = oracle_discrepancy(n, 0.0, 1);
    CHECK(mean_anomaly_score(d) == 0.0);
  }
  SUBCASE("noise-free anomaly blurs the mask") {
    const auto d = oracle_discrepancy(a, 0.0, 1, 1);
    CHECK(d.scores[3 * 16 + 3] == 1.0);
    CHECK(d.scores[1 * 16 + 1] == doctest::Approx(1.0 / 9));
    CHECK(d.scores[10 * 16 + 10] == 0.0);
    // Box blur conserves mass when the mask is away from the border.
    CHECK(mean_anomaly_score(d) == doctest::Approx(16.0 / 256).epsilon(1e-12));
  }
  SUBCASE("noise is clipped, seeded and separates classes on average") {
    const auto d1 = oracle_discrepancy(a, 0.05, 7);
    CHECK(d1.scores == oracle_discrepancy(a, 0.05, 7).scores);
    CHECK(d1.scores != oracle_discrepancy(a, 0.05, 8).scores);
    d1.validate();
    CHECK(mean_anomaly_score(d1) > mean_anomaly_score(oracle_discrepancy(n, 0.05, 7)));
  }
  CHECK_THROWS_AS(oracle_discrepancy(n, -1, 1), ConfigError);
  ImageSample broken = a;
  broken.anomaly_mask.reset();
  CHECK_THROWS_AS(oracle_discrepancy(broken, 0, 1), DataError);
}

TEST_CASE("mean_anomaly_score matches a scalar loop") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    DiscrepancyImage d{9, 13, std::vector<double>(9 * 13)};
    for (auto& v : d.scores) v = rng.uniform();
    CHECK(std::abs(mean_anomaly_score(d) - oracle::mean(d.scores)) <= 1e-10);
  }
  DiscrepancyImage bad{2, 2, {0, 0, 0, 1.5}};
  CHECK_THROWS_AS(mean_anomaly_score(bad), DataError);
  DiscrepancyImage wrong{2, 2, {0, 0, 0}};
  CHECK_THROWS_AS(mean_anomaly_score(wrong), ShapeError);
}

TEST_CASE("score_distribution_stats") {
  const auto s = score_distribution_stats({5, 1, 3, 2, 4});
  CHECK(s.n == 5);
  CHECK(s.min == 1);
  CHECK(s.q1 == 2);
  CHECK(s.median == 3);
  CHECK(s.q3 == 4);
  CHECK(s.max == 5);
  CHECK(s.mean == 3);
  const auto e = score_distribution_stats({0, 1});
  CHECK(e.q1 == 0.25);
  CHECK(e.median == 0.5);
  CHECK(score_distribution_stats({2}).q3 == 2);
  CHECK_THROWS_AS(score_distribution_stats({}), DataError);
  CHECK(stats_csv_header() == "dataset,n,min,q1,median,q3,max,mean");
  CHECK(stats_csv_row("x", e).rfind("x,2,0,0.25,0.5,", 0) == 0);
}

TEST_CASE("fourth channel") {
  const ImageSample a = blank(8, Label::Anomaly);
  const auto d = oracle_discrepancy(a, 0.0, 1);
  const ImageSample four = attach_fourth_channel(a, d);
  CHECK(four.channels == 4);
  CHECK(four.px(3, 3, 3) == 1.0f);
  CHECK(four.px(3, 3, 1) == 0.5f);
  const ImageSample three = strip_fourth_channel(four);
  CHECK(three.pixels == a.pixels);
  CHECK_THROWS_AS(attach_fourth_channel(four, d), DataError);
  CHECK_THROWS_AS(strip_fourth_channel(a), DataError);
  CHECK_THROWS_AS(attach_fourth_channel(blank(16, Label::Normal), d), ShapeError);
}

TEST_CASE("discrepancy PNG round trip and file provider") {
  testutil::TempDir dir("disc");
  const ImageSample a = blank(8, Label::Anomaly);
  const auto d = oracle_discrepancy(a, 0.0, 1);
  write_discrepancy_png(dir.path() / "anom.png", d);
  const FileDiscrepancyProvider files(dir.path());
  const auto back = files.provide(a);
  REQUIRE(back.scores.size() == d.scores.size());
  for (std::size_t i = 0; i < d.scores.size(); ++i) CHECK(std::abs(back.scores[i] - d.scores[i]) <= 0.5 / 255 + 1e-12);
  CHECK_THROWS_AS(files.provide(blank(8, Label::Normal)), DataError);

  const OracleDiscrepancyProvider oracle_provider(0.0, 1);
  CHECK(oracle_provider.provide(a).scores == d.scores);
}
