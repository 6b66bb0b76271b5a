// Command-line front end: generate, train, eval, sweep, report.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "clvae/config.hpp"
#include "clvae/errors.hpp"
#include "clvae/pipeline.hpp"

namespace {

using namespace clvae;
using nlohmann::json;

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
  long long seed = -1;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_file, "JSON config file");
  cmd->add_option("--set", o.sets, "Override a config key, e.g. --set train.lr=0.001");
  cmd->add_option("--out", o.out, "Output root directory");
  cmd->add_option("--seed", o.seed, "Override every seed");
  cmd->add_flag("--quiet", o.quiet, "No progress output");
  cmd->allow_extras();
}

// Turns leftover "--a.b=v" / "--a.b v" tokens into overrides.
std::vector<std::string> extra_overrides(const std::vector<std::string>& extras) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& t = extras[i];
    if (t.rfind("--", 0) != 0 || t.size() < 3) throw ConfigError("unexpected argument '" + t + "'");
    const std::string body = t.substr(2);
    if (body.find('.') == std::string::npos && body.find('=') == std::string::npos &&
        body != "out")
      throw ConfigError("unknown option '" + t + "'");
    if (body.find('=') != std::string::npos) {
      out.push_back(body);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("option '" + t + "' needs a value");
      out.push_back(body + "=" + extras[++i]);
    }
  }
  return out;
}

ExperimentConfig resolve(const CommonOptions& o, const std::vector<std::string>& extras,
                         const std::vector<std::string>& more = {}) {
  json j = json::object();
  if (!o.config_file.empty()) {
    std::ifstream in(o.config_file);
    if (!in) throw ConfigError("cannot open config file " + o.config_file);
    try {
      j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + o.config_file + ": " + e.what());
    }
  }
  for (const auto& s : o.sets) apply_override(j, s);
  for (const auto& s : extra_overrides(extras)) apply_override(j, s);
  for (const auto& s : more) apply_override(j, s);
  if (!o.out.empty()) j["out"] = o.out;
  ExperimentConfig c = config_from_json(j);
  if (o.seed >= 0) apply_seed(c, static_cast<std::uint64_t>(o.seed));
  c.validate();
  return c;
}

ProgressFn progress_printer(bool quiet) {
  if (quiet) return {};
  return [](const EpochSummary& e) {
    std::fprintf(stderr, "epoch %3d  steps %4d  total %.5f  recon %.5f  kl %.3f  perc %.5f\n",
                 e.epoch, e.steps, e.mean.total, e.mean.recon, e.mean.kl, e.mean.perceptual);
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditioned-latent VAE for image anomaly classification"};
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, eval_o, sweep_o;
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset and its manifest");
  add_common(gen, gen_o);
  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, train_o);
  auto* eval = app.add_subcommand("eval", "Evaluate a trained model");
  add_common(eval, eval_o);
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint path (default: run directory)");
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate one run per value");
  add_common(sweep, sweep_o);
  std::string axis;
  std::vector<double> values;
  sweep->add_option("--axis", axis, "beta | latent_channels | use_discrepancy");
  sweep->add_option("--values", values, "Values to sweep")->delimiter(',');
  auto* report = app.add_subcommand("report", "Bundle the outputs of a run directory");
  std::string run_dir;
  report->add_option("run_dir", run_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    std::filesystem::path dir;
    if (*gen) {
      dir = cmd_generate(resolve(gen_o, gen->remaining()));
    } else if (*train) {
      dir = cmd_train(resolve(train_o, train->remaining()), progress_printer(train_o.quiet));
    } else if (*eval) {
      dir = cmd_eval(resolve(eval_o, eval->remaining()), checkpoint);
      if (!eval_o.quiet) std::cerr << std::ifstream(dir / "report.json").rdbuf();
    } else if (*sweep) {
      std::vector<std::string> more;
      if (!axis.empty()) more.push_back("sweep.axis=" + json(axis).dump());
      if (!values.empty()) more.push_back("sweep.values=" + json(values).dump());
      dir = cmd_sweep(resolve(sweep_o, sweep->remaining(), more), progress_printer(sweep_o.quiet));
    } else if (*report) {
      dir = cmd_report(run_dir);
      const auto bundle = json::parse(std::ifstream(dir / "bundle.json"));
      if (!bundle.at("complete").get<bool>())
        std::cerr << "warning: partial report, see the errors section of " << (dir / "bundle.json") << "\n";
    }
    std::cout << dir.string() << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
