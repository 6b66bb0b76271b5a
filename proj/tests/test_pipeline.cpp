#include <doctest.h>

#include <fstream>

#include "clvae/errors.hpp"
#include "clvae/pipeline.hpp"
#include "test_util.hpp"

using namespace clvae;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c;
  c.vae.image_size = 16;
  c.vae.widths = {4, 6};
  c.vae.latent_channels = 3;
  c.data.n_normal = 24;
  c.data.n_anomaly = 12;
  c.train.epochs = 2;
  c.train.batch_size = 6;
  c.train.lr = 1e-3;
  c.out = out.string();
  return c;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  std::vector<json> rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(json::parse(line));
  return rows;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

TEST_CASE("prepare_data") {
  testutil::TempDir dir("pipe");
  ExperimentConfig c = tiny(dir.path());
  const auto d = prepare_data(c);
  CHECK(d.train.size() + d.val.size() + d.test.size() == 36);
  CHECK(d.train.size() > d.test.size());
  CHECK(to_tensor(d.train).shape() == Shape4{static_cast<int>(d.train.size()), 3, 16, 16});
  CHECK(labels_of(prepare_data(c).test) == labels_of(d.test));

  c.ablation.use_discrepancy = true;
  const auto d4 = prepare_data(c);
  CHECK(d4.train.front().channels == 4);
  CHECK(to_tensor(d4.test).c() == 4);

  c.data.n_normal = 0;
  c.data.n_anomaly = 0;
  CHECK_THROWS(prepare_data(c));
}

TEST_CASE("train, eval and report") {
  testutil::TempDir dir("pipe");
  const ExperimentConfig c = tiny(dir.path());
  const fs::path run = cmd_train(c);
  CHECK(run == c.run_dir());
  for (const char* f : {"config.json", "metrics.jsonl", "checkpoint.clvae", "train_summary.json"})
    CHECK_MESSAGE(fs::exists(run / f), f);
  CHECK(config_from_json(read_json(run / "config.json")).hash() == c.hash());

  const auto log = read_jsonl(run / "metrics.jsonl");
  REQUIRE(!log.empty());
  CHECK(log.front()["step"] == 1);
  for (const auto& row : log) {
    CHECK(row["distance"] == 0.0);
    CHECK(row["cluster"] == 0.0);
    CHECK(row["perceptual"].get<double>() > 0.0);
  }
  const auto model = load_checkpoint(run / "checkpoint.clvae");
  CHECK(model.spec().latent_channels == 3);

  cmd_eval(c);
  const json report = read_json(run / "report.json");
  for (const char* k : {"fid", "mse", "auroc", "tpr", "fpr", "accuracy", "config_hash"})
    CHECK_MESSAGE(report.contains(k), k);
  CHECK(report["config_hash"] == c.hash());
  CHECK(report["auroc"].get<double>() >= 0.0);
  CHECK(report["auroc"].get<double>() <= 1.0);
  const EvalReport parsed = EvalReport::from_json(report);
  CHECK(parsed.n_test == prepare_data(c).test.size());
  for (const char* f : {"roc.csv", "scatter.csv", "boxplot.csv", "clusters.clvae"})
    CHECK_MESSAGE(fs::exists(run / f), f);

  const fs::path bundle_dir = cmd_report(run);
  const json bundle = read_json(bundle_dir / "bundle.json");
  CHECK(bundle["complete"] == true);
  CHECK(bundle["directory_matches_hash"] == true);
  CHECK(bundle["config_hash"] == c.hash());

  SUBCASE("eval with an explicit checkpoint path") {
    CHECK_NOTHROW(cmd_eval(c, run / "checkpoint.clvae"));
    CHECK_THROWS_AS(cmd_eval(c, run / "missing.clvae"), DataError);
  }
}

TEST_CASE("identical seeds give identical metrics logs") {
  testutil::TempDir a("pipe"), b("pipe");
  const fs::path ra = cmd_train(tiny(a.path()));
  const fs::path rb = cmd_train(tiny(b.path()));
  CHECK(file_hash(ra / "metrics.jsonl") == file_hash(rb / "metrics.jsonl"));

  ExperimentConfig other = tiny(b.path());
  other.seeds.model = 2;
  const fs::path rc = cmd_train(other);
  CHECK(rc != rb);
  CHECK(file_hash(rc / "metrics.jsonl") != file_hash(rb / "metrics.jsonl"));
}

TEST_CASE("auxiliary terms appear in the log when enabled") {
  testutil::TempDir dir("pipe");
  ExperimentConfig c = tiny(dir.path());
  c.train.epochs = 1;
  c.ablation.use_distance_loss = true;
  c.ablation.use_cluster_loss = true;
  c.ablation.use_perceptual_loss = false;
  c.loss.w_distance = 0.1;
  c.loss.w_cluster = 0.1;
  const auto log = read_jsonl(cmd_train(c) / "metrics.jsonl");
  bool distance = false, cluster = false;
  for (const auto& row : log) {
    distance |= row["distance"].get<double>() < 0.0;
    cluster |= row["cluster"].get<double>() > 0.0;
    CHECK(row["perceptual"] == 0.0);
  }
  CHECK(distance);
  CHECK(cluster);
}

TEST_CASE("sweep over the discrepancy channel") {
  testutil::TempDir dir("pipe");
  ExperimentConfig c = tiny(dir.path());
  c.train.epochs = 1;
  c.sweep.axis = "use_discrepancy";
  c.sweep.values = {0, 1};
  const fs::path run = cmd_sweep(c);
  const json s = read_json(run / "sweep.json");
  REQUIRE(s["rows"].size() == 2);
  CHECK(s["rows"][0]["input_channels"] == 3);
  CHECK(s["rows"][1]["input_channels"] == 4);
  CHECK(s["violations"].empty());
  CHECK(s["rows"][0]["config_hash"] != s["rows"][1]["config_hash"]);
  for (const auto& row : s["rows"])
    CHECK(fs::exists(fs::path(c.out) / row["config_hash"].get<std::string>() / "report.json"));
}

TEST_CASE("generate writes a loadable manifest") {
  testutil::TempDir dir("pipe");
  ExperimentConfig c = tiny(dir.path());
  const fs::path run = cmd_generate(c);
  const fs::path manifest = run / "data" / "manifest.jsonl";
  REQUIRE(fs::exists(manifest));
  const auto lines = read_jsonl(manifest);
  REQUIRE(lines.size() == 37);
  CHECK(lines.front().contains("manifest_version"));

  ExperimentConfig from_files = c;
  from_files.data.source = "manifest";
  from_files.data.manifest = manifest.string();
  const auto d = prepare_data(from_files);
  const auto g = prepare_data(c);
  CHECK(d.train.size() == g.train.size());
  CHECK(d.test.size() == g.test.size());
  CHECK(labels_of(d.test) == labels_of(g.test));
}

TEST_CASE("report errors") {
  testutil::TempDir dir("pipe");
  CHECK_THROWS_AS(cmd_report(dir.path() / "absent"), DataError);
  CHECK_THROWS_AS(cmd_report(dir.path()), DataError);
}

TEST_CASE("numerical blow-up aborts with the step number") {
  testutil::TempDir dir("pipe");
  ExperimentConfig c = tiny(dir.path());
  c.train.lr = 1e12;
  c.train.epochs = 5;
  try {
    cmd_train(c);
    FAIL("training with a huge learning rate should not finish");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
    CHECK(e.exit_code() == 3);
  }
}
