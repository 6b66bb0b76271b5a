// Acceptance suite. Prints one PASS/FAIL line per criterion.
//
//   acceptance <work-dir> [criterion...]     criteria 1..8, default all
//
// Criteria 5, 6 and 8 train full-size toy models and take minutes each.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clvae/discrepancy.hpp"
#include "clvae/losses.hpp"
#include "clvae/metrics.hpp"
#include "clvae/pipeline.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

using namespace clvae;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome(const fs::path&)> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor random_tensor(Shape4 s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(s);
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<double> random_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-2, 2);
  return v;
}

// ------------------------------------------------------------------ 1

Outcome oracle_equivalence(const fs::path&) {
  Rng rng(101);
  std::vector<std::string> failures;
  double worst_kl = 0;

  for (int t = 0; t < 3; ++t) {
    const Tensor mu = random_tensor({2, 1, 1, 3}, rng);
    const Tensor lv = random_tensor({2, 1, 1, 3}, rng);
    const Tensor m = random_tensor({2, 1, 1, 3}, rng, -3, 3);
    const double exact = kl_divergence(mu, lv, m);
    const double mc = oracle::kl_monte_carlo(mu, lv, m, 1000000, 200 + t);
    worst_kl = std::max(worst_kl, std::abs(mc - exact) / exact);
  }
  if (worst_kl >= 0.01) failures.push_back("kl");

  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    const Tensor a = random_tensor({3, 4, 8, 8}, rng), b = random_tensor({3, 4, 8, 8}, rng);
    worst = std::max(worst, std::abs(reconstruction_loss(a, b) - oracle::mse(a, b)));
    const auto u = random_vector(64, rng), v = random_vector(64, rng);
    worst = std::max(worst, std::abs(distance_loss(u, v) - oracle::neg_l1(u, v)));
    const Tensor z = random_tensor({5, 4, 4, 4}, rng), c = random_tensor({5, 4, 4, 4}, rng);
    worst = std::max(worst, std::abs(cluster_loss(z, c) - oracle::cluster(z, c)));
    DiscrepancyImage d{16, 16, std::vector<double>(256)};
    for (auto& s : d.scores) s = rng.uniform();
    worst = std::max(worst, std::abs(mean_anomaly_score(d) - oracle::mean(d.scores)));
  }
  if (worst > 1e-10) failures.push_back("scalar oracles");

  long cases = 0, mismatches = 0;
  for (int n = 2; n <= 8; ++n) {
    int pow3 = 1;
    for (int i = 0; i < n; ++i) pow3 *= 3;
    std::vector<double> s(n);
    std::vector<Label> l(n);
    for (int code = 0; code < pow3; ++code) {
      for (int i = 0, c = code; i < n; ++i, c /= 3) s[i] = c % 3;
      for (int mask = 1; mask < (1 << n) - 1; ++mask) {
        for (int i = 0; i < n; ++i) l[i] = (mask >> i) & 1 ? Label::Anomaly : Label::Normal;
        mismatches += roc_curve(s, l).auc != oracle::mann_whitney(s, l);
        ++cases;
      }
    }
  }
  if (mismatches > 0) failures.push_back("roc");

  std::string detail = "kl rel err " + fmt("%.2e", worst_kl) + ", scalar max err " +
                       fmt("%.1e", worst) + ", auc " + std::to_string(cases - mismatches) + "/" +
                       std::to_string(cases) + " exact";
  for (const auto& f : failures) detail += "; failed: " + f;
  return {failures.empty(), detail};
}

// ------------------------------------------------------------------ 2

Outcome gradient_suite(const fs::path&) {
  Rng rng(202), pick(203);
  double worst = 0;
  int checked = 0;
  auto slice = [&](Tensor& var, const std::function<double()>& f, const Tensor& grad) {
    for (int k = 0; k < 10; ++k) {
      const std::size_t i = pick.below(var.size());
      worst = std::max(worst, oracle::rel_error(oracle::central_difference(f, var[i]), grad[i]));
      ++checked;
    }
  };

  {
    const Tensor x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
    Tensor y = random_tensor({2, 3, 8, 8}, rng, 0, 1);
    slice(y, [&] { return reconstruction_loss(x, y); }, reconstruction_loss_grad(x, y));
  }
  {
    Tensor mu = random_tensor({3, 4, 4, 4}, rng), lv = random_tensor({3, 4, 4, 4}, rng);
    const Tensor m = random_tensor({3, 4, 4, 4}, rng, -3, 3);
    Tensor gm, gl;
    kl_divergence_grad(mu, lv, m, gm, gl);
    slice(mu, [&] { return kl_divergence(mu, lv, m); }, gm);
    slice(lv, [&] { return kl_divergence(mu, lv, m); }, gl);
  }
  {
    std::vector<double> a = random_vector(64, rng), b = random_vector(64, rng);
    std::vector<double> ga(64), gb(64);
    distance_loss_grad(a, b, ga, gb);
    auto f = [&] { return distance_loss(a, b); };
    for (int k = 0; k < 10; ++k) {
      const std::size_t i = pick.below(64);
      worst = std::max(worst, oracle::rel_error(oracle::central_difference(f, a[i]), ga[i]));
      worst = std::max(worst, oracle::rel_error(oracle::central_difference(f, b[i]), gb[i]));
      checked += 2;
    }
  }
  {
    Tensor z = random_tensor({3, 4, 4, 4}, rng);
    const Tensor c = random_tensor({3, 4, 4, 4}, rng);
    slice(z, [&] { return cluster_loss(z, c); }, cluster_loss_grad(z, c));
  }
  const PerceptualBackbone bb(7);
  {
    const Tensor x = random_tensor({2, 3, 32, 32}, rng, 0, 1);
    Tensor y = random_tensor({2, 3, 32, 32}, rng, 0, 1);
    slice(y, [&] { return perceptual_loss(bb, x, y); }, bb.loss_grad(x, y));
  }
  {
    const Tensor x = random_tensor({4, 4, 32, 32}, rng, 0, 1);
    Tensor xhat = random_tensor({4, 4, 32, 32}, rng, 0, 1);
    Tensor mu = random_tensor({4, 4, 4, 4}, rng, -2, 2), lv = random_tensor({4, 4, 4, 4}, rng);
    const Tensor prior = random_tensor({4, 4, 4, 4}, rng, -3, 3);
    const Tensor cm = random_tensor({4, 4, 4, 4}, rng);
    const std::vector<Label> labels{Label::Normal, Label::Anomaly, Label::Anomaly, Label::Normal};
    ObjectiveSwitches sw;
    sw.distance = sw.cluster = sw.perceptual = true;
    const LossWeights w{0.01, 0.5, 0.7, 0.9};
    const ObjectiveInputs in{&x, &xhat, &mu, &lv, &prior, &labels, &cm};
    const ObjectiveResult r = evaluate_objective(in, w, sw, &bb);
    auto f = [&] { return evaluate_objective(in, w, sw, &bb).breakdown.total; };
    slice(xhat, f, r.grad_xhat);
    slice(mu, f, r.grad_mu);
    slice(lv, f, r.grad_logvar);
  }
  return {worst < 1e-4, std::to_string(checked) + " coordinates, max rel err " + fmt("%.2e", worst)};
}

// ------------------------------------------------------------------ 3

Outcome frechet_suite(const fs::path&) {
  Rng rng(303);
  const int d = 16;
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  const Eigen::MatrixXd s = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd m1(d), m2(d), v1(d), v2(d);
  for (int i = 0; i < d; ++i) {
    m1(i) = rng.normal();
    m2(i) = rng.normal();
    v1(i) = rng.uniform(0.1, 2);
    v2(i) = rng.uniform(0.1, 2);
  }
  const double self = std::abs(frechet_distance({m1, s, 10}, {m1, s, 10}));
  const double eq_expect = (m1 - m2).squaredNorm();
  const double eq_err = std::abs(frechet_distance({m1, s, 10}, {m2, s, 10}) - eq_expect) / eq_expect;
  const double diag_expect = (m1 - m2).squaredNorm() + (v1.array().sqrt() - v2.array().sqrt()).square().sum();
  const Eigen::MatrixXd d1 = v1.asDiagonal(), d2 = v2.asDiagonal();
  const double diag_err = std::abs(frechet_distance({m1, d1, 10}, {m2, d2, 10}) - diag_expect) / diag_expect;

  const PerceptualBackbone bb(7);
  SynthSceneSpec spec = SynthSceneSpec::defaults();
  const auto samples = generate_synthetic_dataset(spec, 48, 0);
  Tensor real(static_cast<int>(samples.size()), 3, spec.image_size, spec.image_size);
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < spec.image_size; ++y)
        for (int x = 0; x < spec.image_size; ++x)
          real[((i * 3 + c) * spec.image_size + y) * spec.image_size + x] = samples[i].px(y, x, c);
  std::vector<double> fids;
  for (double shift : {0.1, 0.2, 0.3}) {
    Tensor g = real;
    for (auto& v : g.vec()) v = std::min(1.0, v + shift);
    fids.push_back(fid(real, g, bb));
  }
  const bool monotone = fids[0] < fids[1] && fids[1] < fids[2];
  const bool pass = self <= 1e-8 && eq_err <= 1e-6 && diag_err <= 1e-6 && monotone;
  return {pass, "f(a,a)=" + fmt("%.1e", self) + ", equal-cov rel err " + fmt("%.1e", eq_err) +
                    ", diagonal rel err " + fmt("%.1e", diag_err) + ", fid by shift " +
                    fmt("%.4f", fids[0]) + " < " + fmt("%.4f", fids[1]) + " < " + fmt("%.4f", fids[2])};
}

// ------------------------------------------------------------------ 4

Outcome replacement_suite(const fs::path&) {
  const LabelMap map = scenario::abc_map();
  const auto freqs = scenario::abc_frequencies();
  const auto tf = scenario::tally_replacements(
      [&](std::uint64_t s) { return frequency_based_label_replacement(map, freqs, 16, s).second; }, 625);
  const auto tu = scenario::tally_replacements(
      [&](std::uint64_t s) { return random_label_replacement(map, 16, s).second; }, 625);
  double min_p = 1.0;
  for (int orig : {scenario::kA, scenario::kB}) {
    min_p = std::min(min_p, oracle::chi_square_p({tf.counts[orig], tf.counts[orig] + 3},
                                                 scenario::frequency_target(orig)));
    min_p = std::min(min_p, oracle::chi_square_p({tu.counts[orig], tu.counts[orig] + 3},
                                                 scenario::uniform_target(orig)));
  }
  const long c_freq = tf.counts[0][scenario::kC] + tf.counts[1][scenario::kC];
  const long c_unif = tu.counts[0][scenario::kC] + tu.counts[1][scenario::kC];
  const long draws = tf.total_for(0) + tf.total_for(1);
  return {min_p > 0.01 && c_freq < c_unif && draws == 10000,
          std::to_string(draws) + " draws per mode, min chi-square p " + fmt("%.3f", min_p) +
              ", 5% class replacements " + std::to_string(c_freq) + " (frequency) vs " +
              std::to_string(c_unif) + " (uniform)"};
}

// ------------------------------------------------------------------ toy runs

ExperimentConfig toy_config(const fs::path& out, std::uint64_t seed) {
  ExperimentConfig c;
  c.data.n_normal = 500;
  c.data.n_anomaly = 100;
  c.vae.image_size = 64;
  c.vae.latent_channels = 64;
  c.loss.beta = 0.01;
  c.train.epochs = 30;
  c.train.lr = 1e-3;
  c.out = out.string();
  apply_seed(c, seed);
  return c;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// Trains and evaluates unless this work directory already holds the finished run.
json toy_run(const ExperimentConfig& c) {
  const fs::path dir = c.run_dir();
  if (fs::exists(dir / "report.json") && fs::exists(dir / "metrics.jsonl"))
    return read_json(dir / "report.json");
  std::fprintf(stderr, "  training %s\n", dir.string().c_str());
  cmd_train(c);
  cmd_eval(c);
  return read_json(dir / "report.json");
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

Outcome toy_conditioning(const fs::path& work) {
  std::vector<double> acc, auroc;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const json r = toy_run(toy_config(work / "toy", seed));
    acc.push_back(r["accuracy"].get<double>());
    auroc.push_back(r["auroc"].get<double>());
    per_seed += " s" + std::to_string(seed) + "=" + fmt("%.3f", acc.back()) + "/" + fmt("%.3f", auroc.back());
  }
  const double ma = median3(acc), mu = median3(auroc);
  return {ma >= 0.90 && mu >= 0.95, "median accuracy " + fmt("%.3f", ma) + ", median AUROC " +
                                        fmt("%.3f", mu) + " (accuracy/AUROC" + per_seed + ")"};
}

Outcome directional(const fs::path& work) {
  ExperimentConfig base = toy_config(work / "directional", 1);
  base.recon_reduction = "sum";
  ExperimentConfig beta1 = base;
  beta1.loss.beta = 1.0;
  ExperimentConfig wide = base;
  wide.vae.latent_channels = 512;
  const double f_small_beta = toy_run(base)["fid"].get<double>();
  const double f_beta1 = toy_run(beta1)["fid"].get<double>();
  const double f_wide = toy_run(wide)["fid"].get<double>();
  return {f_small_beta < f_beta1 && f_wide <= f_small_beta,
          "FID beta 0.01 " + fmt("%.5f", f_small_beta) + " vs beta 1 " + fmt("%.5f", f_beta1) +
              "; FID 512 ch " + fmt("%.5f", f_wide) + " vs 64 ch " + fmt("%.5f", f_small_beta) +
              " (summed reconstruction)"};
}

Outcome discrepancy_ablation(const fs::path& work) {
  ExperimentConfig c = toy_config(work / "ablation", 1);
  c.sweep.axis = "use_discrepancy";
  c.sweep.values = {0, 1};
  const fs::path dir = cmd_sweep(c);
  const json s = read_json(dir / "sweep.json");
  std::string detail;
  bool ok = s["rows"].size() == 2 && s["violations"].empty();
  for (const auto& row : s["rows"]) {
    const double a = row["accuracy"].get<double>();
    ok = ok && std::isfinite(a);
    detail += std::to_string(row["input_channels"].get<int>()) + "-channel accuracy " + fmt("%.3f", a) + ", ";
  }
  return {ok, detail + std::to_string(s["violations"].size()) + " invariant violations"};
}

Outcome determinism(const fs::path& work) {
  const ExperimentConfig first = toy_config(work / "toy", 1);
  toy_run(first);
  const ExperimentConfig second = toy_config(work / "repeat", 1);
  fs::remove_all(second.run_dir());
  toy_run(second);
  const std::string a = file_hash(first.run_dir() / "metrics.jsonl");
  const std::string b = file_hash(second.run_dir() / "metrics.jsonl");
  return {a == b, "metrics log hashes " + a + " and " + b};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <work-dir> [criterion...]\n");
    return 2;
  }
  const fs::path work = argv[1];
  fs::create_directories(work);

  const std::vector<Criterion> all{
      {1, "oracle equivalence", 120, oracle_equivalence},
      {2, "gradients", 120, gradient_suite},
      {3, "frechet distance", 60, frechet_suite},
      {4, "replacement samplers", 60, replacement_suite},
      {5, "toy conditioning run", 1200, toy_conditioning},
      {6, "directional beta and latent size", 3 * 1800, directional},
      {7, "discrepancy ablation", 2 * 1800, discrepancy_ablation},
      {8, "determinism", 2 * 1200, determinism},
  };
  std::vector<int> wanted;
  for (int i = 2; i < argc; ++i) wanted.push_back(std::stoi(argv[i]));

  bool all_pass = true;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(work);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_seconds) {
      o.pass = false;
      o.detail += "; over the time budget";
    }
    all_pass = all_pass && o.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
