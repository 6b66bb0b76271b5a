#include "clvae/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "clvae/errors.hpp"

namespace clvae {

using nlohmann::json;

namespace {

double rational_value(const Rational& r) { return static_cast<double>(r.num) / r.den; }

void check_known(const json& given, const json& defaults, const std::string& prefix) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    const json& d = defaults.at(it.key());
    if (d.is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key '" + key + "' must be an object");
      check_known(it.value(), d, key);
    }
  }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + section + "." + key + "': " + e.what());
  }
}

}  // namespace

VaeSpec ExperimentConfig::model_spec() const {
  VaeSpec s = vae;
  s.input_channels = ablation.use_discrepancy ? 4 : 3;
  s.seed = seeds.model;
  return s;
}

SynthSceneSpec ExperimentConfig::scene_spec() const {
  SynthSceneSpec s = SynthSceneSpec::defaults();
  s.image_size = vae.image_size;
  s.anomaly_area_min = data.anomaly_area_min;
  s.anomaly_area_max = data.anomaly_area_max;
  s.min_objects = data.min_objects;
  s.max_objects = data.max_objects;
  s.texture_noise = data.texture_noise;
  s.seed = seeds.data;
  return s;
}

ObjectiveSwitches ExperimentConfig::switches() const {
  ObjectiveSwitches s;
  s.distance = ablation.use_distance_loss;
  s.cluster = ablation.use_cluster_loss;
  s.perceptual = ablation.use_perceptual_loss;
  s.distance_radius = distance_radius;
  s.recon_sum = recon_reduction == "sum";
  return s;
}

LossWeights ExperimentConfig::effective_weights() const {
  LossWeights w = loss;
  if (!ablation.use_distance_loss) w.w_distance = 0;
  if (!ablation.use_cluster_loss) w.w_cluster = 0;
  if (!ablation.use_perceptual_loss) w.w_perceptual = 0;
  return w;
}

void ExperimentConfig::validate() const {
  try {
    model_spec().validate();
    loss.validate();
    split.validate();
    scene_spec().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(train.lr > 0)) throw ConfigError("train.lr must be > 0");
  if (train.anomaly_fraction > 1) throw ConfigError("train.anomaly_fraction must be <= 1");
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (!(distance_radius > 0)) throw ConfigError("loss.distance_radius must be > 0");
  if (!(prior_delta > 0)) throw ConfigError("prior_delta must be > 0");
  if (recon_reduction != "mean" && recon_reduction != "sum")
    throw ConfigError("loss.recon_reduction must be mean or sum");
  if (data.source != "synthetic" && data.source != "manifest")
    throw ConfigError("data.source must be 'synthetic' or 'manifest'");
  if (data.source == "manifest" && data.manifest.empty())
    throw ConfigError("data.manifest is required when data.source = manifest");
  if (data.n_normal < 0 || data.n_anomaly < 0) throw ConfigError("sample counts must be >= 0");
  if (data.per_dataset_cap < 0) throw ConfigError("data.per_dataset_cap must be >= 0");
  if (discrepancy.provider != "oracle" && discrepancy.provider != "files")
    throw ConfigError("discrepancy.provider must be 'oracle' or 'files'");
  if (discrepancy.provider == "files" && discrepancy.dir.empty())
    throw ConfigError("discrepancy.dir is required when discrepancy.provider = files");
  if (discrepancy.noise_level < 0) throw ConfigError("discrepancy.noise_level must be >= 0");
  if (discrepancy.blur_radius < 0) throw ConfigError("discrepancy.blur_radius must be >= 0");
  if (kmeans_k < 2) throw ConfigError("kmeans_k must be >= 2");
  if (sweep.axis != "beta" && sweep.axis != "latent_channels" && sweep.axis != "use_discrepancy")
    throw ConfigError("sweep.axis must be beta, latent_channels or use_discrepancy");
  if (sweep.values.empty()) throw ConfigError("sweep.values must be nonempty");
  if (out.empty()) throw ConfigError("out must be nonempty");
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["vae"] = {{"latent_channels", c.vae.latent_channels}, {"image_size", c.vae.image_size},
              {"widths", c.vae.widths},                   {"rrelu_lower", c.vae.rrelu_lower},
              {"rrelu_upper", c.vae.rrelu_upper},         {"extra_pool", c.vae.extra_pool}};
  j["loss"] = {{"beta", c.loss.beta},
               {"w_distance", c.loss.w_distance},
               {"w_cluster", c.loss.w_cluster},
               {"w_perceptual", c.loss.w_perceptual},
               {"distance_radius", c.distance_radius},
               {"prior_delta", c.prior_delta},
               {"recon_reduction", c.recon_reduction}};
  j["split"] = {{"train", rational_value(c.split.train)},
                {"val", rational_value(c.split.val)},
                {"test", rational_value(c.split.test)}};
  j["data"] = {{"source", c.data.source},
               {"manifest", c.data.manifest},
               {"n_normal", c.data.n_normal},
               {"n_anomaly", c.data.n_anomaly},
               {"min_anomaly_pixels", c.data.min_anomaly_pixels},
               {"per_dataset_cap", c.data.per_dataset_cap},
               {"anomaly_area_min", c.data.anomaly_area_min},
               {"anomaly_area_max", c.data.anomaly_area_max},
               {"min_objects", c.data.min_objects},
               {"max_objects", c.data.max_objects},
               {"texture_noise", c.data.texture_noise}};
  j["discrepancy"] = {{"provider", c.discrepancy.provider},
                      {"dir", c.discrepancy.dir},
                      {"noise_level", c.discrepancy.noise_level},
                      {"blur_radius", c.discrepancy.blur_radius}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"linear_decay", c.train.linear_decay},
                {"adam_beta1", c.train.adam.beta1},
                {"adam_beta2", c.train.adam.beta2},
                {"adam_eps", c.train.adam.eps},
                {"anomaly_fraction", c.train.anomaly_fraction},
                {"checkpoint_every", c.train.checkpoint_every}};
  j["seeds"] = {{"model", c.seeds.model}, {"data", c.seeds.data}, {"backbone", c.seeds.backbone}};
  j["ablation"] = {{"use_discrepancy", c.ablation.use_discrepancy},
                   {"use_distance_loss", c.ablation.use_distance_loss},
                   {"use_cluster_loss", c.ablation.use_cluster_loss},
                   {"use_perceptual_loss", c.ablation.use_perceptual_loss}};
  j["eval"] = {{"kmeans_k", c.kmeans_k}};
  j["sweep"] = {{"axis", c.sweep.axis}, {"values", c.sweep.values}};
  j["out"] = c.out;
  return j;
}

ExperimentConfig config_from_json(const json& given) {
  if (!given.is_object()) throw ConfigError("config must be a JSON object");
  const json defaults = config_to_json(ExperimentConfig{});
  check_known(given, defaults, "");
  json j = defaults;
  j.merge_patch(given);

  ExperimentConfig c;
  c.vae.latent_channels = get<int>(j, "vae", "latent_channels");
  c.vae.image_size = get<int>(j, "vae", "image_size");
  c.vae.widths = get<std::vector<int>>(j, "vae", "widths");
  c.vae.rrelu_lower = get<double>(j, "vae", "rrelu_lower");
  c.vae.rrelu_upper = get<double>(j, "vae", "rrelu_upper");
  c.vae.extra_pool = get<bool>(j, "vae", "extra_pool");
  c.loss.beta = get<double>(j, "loss", "beta");
  c.loss.w_distance = get<double>(j, "loss", "w_distance");
  c.loss.w_cluster = get<double>(j, "loss", "w_cluster");
  c.loss.w_perceptual = get<double>(j, "loss", "w_perceptual");
  c.distance_radius = get<double>(j, "loss", "distance_radius");
  c.prior_delta = get<double>(j, "loss", "prior_delta");
  c.recon_reduction = get<std::string>(j, "loss", "recon_reduction");
  c.split.train = Rational::from_double(get<double>(j, "split", "train"));
  c.split.val = Rational::from_double(get<double>(j, "split", "val"));
  c.split.test = Rational::from_double(get<double>(j, "split", "test"));
  c.data.source = get<std::string>(j, "data", "source");
  c.data.manifest = get<std::string>(j, "data", "manifest");
  c.data.n_normal = get<int>(j, "data", "n_normal");
  c.data.n_anomaly = get<int>(j, "data", "n_anomaly");
  c.data.min_anomaly_pixels = get<std::size_t>(j, "data", "min_anomaly_pixels");
  c.data.per_dataset_cap = get<int>(j, "data", "per_dataset_cap");
  c.data.anomaly_area_min = get<double>(j, "data", "anomaly_area_min");
  c.data.anomaly_area_max = get<double>(j, "data", "anomaly_area_max");
  c.data.min_objects = get<int>(j, "data", "min_objects");
  c.data.max_objects = get<int>(j, "data", "max_objects");
  c.data.texture_noise = get<double>(j, "data", "texture_noise");
  c.discrepancy.provider = get<std::string>(j, "discrepancy", "provider");
  c.discrepancy.dir = get<std::string>(j, "discrepancy", "dir");
  c.discrepancy.noise_level = get<double>(j, "discrepancy", "noise_level");
  c.discrepancy.blur_radius = get<int>(j, "discrepancy", "blur_radius");
  c.train.epochs = get<int>(j, "train", "epochs");
  c.train.batch_size = get<int>(j, "train", "batch_size");
  c.train.lr = get<double>(j, "train", "lr");
  c.train.linear_decay = get<bool>(j, "train", "linear_decay");
  c.train.adam.beta1 = get<double>(j, "train", "adam_beta1");
  c.train.adam.beta2 = get<double>(j, "train", "adam_beta2");
  c.train.adam.eps = get<double>(j, "train", "adam_eps");
  c.train.anomaly_fraction = get<double>(j, "train", "anomaly_fraction");
  c.train.checkpoint_every = get<int>(j, "train", "checkpoint_every");
  c.seeds.model = get<std::uint64_t>(j, "seeds", "model");
  c.seeds.data = get<std::uint64_t>(j, "seeds", "data");
  c.seeds.backbone = get<std::uint64_t>(j, "seeds", "backbone");
  c.ablation.use_discrepancy = get<bool>(j, "ablation", "use_discrepancy");
  c.ablation.use_distance_loss = get<bool>(j, "ablation", "use_distance_loss");
  c.ablation.use_cluster_loss = get<bool>(j, "ablation", "use_cluster_loss");
  c.ablation.use_perceptual_loss = get<bool>(j, "ablation", "use_perceptual_loss");
  c.kmeans_k = get<int>(j, "eval", "kmeans_k");
  c.sweep.axis = get<std::string>(j, "sweep", "axis");
  c.sweep.values = get<std::vector<double>>(j, "sweep", "values");
  try {
    c.out = j.at("out").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key 'out': ") + e.what());
  }
  c.split.seed = c.seeds.data;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override key '" + key + "' crosses a non-object");
    node = &(*node)[parts[i]];
  }
  if (!node->is_object() && !node->is_null())
    throw ConfigError("override key '" + key + "' crosses a non-object");
  (*node)[parts.back()] = value;
}

void apply_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.seeds.model = seed;
  c.seeds.data = seed;
  c.seeds.backbone = seed;
  c.split.seed = seed;
}

std::string canonical_dump(const json& j) { return j.dump(); }  // keys are sorted by json

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string ExperimentConfig::hash() const {
  json j = config_to_json(*this);
  j.erase("out");
  return fnv1a_hex(canonical_dump(j));
}

}  // namespace clvae
