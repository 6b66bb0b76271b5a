#include "clvae/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "clvae/adam.hpp"
#include "clvae/checkpoint.hpp"
#include "clvae/discrepancy.hpp"
#include "clvae/errors.hpp"
#include "clvae/image_io.hpp"
#include "clvae/rng.hpp"

namespace clvae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kEvalBatch = 64;

std::uint64_t tag_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("failed writing " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json breakdown_json(const LossBreakdown& b) {
  return {{"recon", b.recon},         {"kl", b.kl},       {"distance", b.distance},
          {"cluster", b.cluster},     {"perceptual", b.perceptual}, {"total", b.total}};
}

LossBreakdown breakdown_from(const json& j) {
  LossBreakdown b;
  b.recon = j.at("recon").get<double>();
  b.kl = j.at("kl").get<double>();
  b.distance = j.at("distance").get<double>();
  b.cluster = j.at("cluster").get<double>();
  b.perceptual = j.at("perceptual").get<double>();
  b.total = j.at("total").get<double>();
  return b;
}

json epochs_json(const std::vector<EpochSummary>& epochs) {
  json arr = json::array();
  for (const auto& e : epochs) {
    json j = breakdown_json(e.mean);
    j["epoch"] = e.epoch;
    j["steps"] = e.steps;
    arr.push_back(j);
  }
  return arr;
}

std::vector<EpochSummary> epochs_from(const json& arr) {
  std::vector<EpochSummary> out;
  for (const auto& j : arr) out.push_back({j.at("epoch").get<int>(), j.at("steps").get<int>(), breakdown_from(j)});
  return out;
}

// Groups by dataset tag in order of first appearance and splits each group.
DatasetSplits split_per_dataset(const std::vector<ImageSample>& samples, const SplitSpec& spec) {
  DatasetSplits out;
  bool preassigned = !samples.empty();
  for (const auto& s : samples) preassigned = preassigned && s.split != Split::Unassigned;
  if (preassigned) {
    for (const auto& s : samples)
      (s.split == Split::Train ? out.train : s.split == Split::Val ? out.val : out.test).push_back(s);
    return out;
  }
  std::vector<std::string> tags;
  std::map<std::string, std::vector<ImageSample>> groups;
  for (const auto& s : samples) {
    if (!groups.count(s.dataset)) tags.push_back(s.dataset);
    groups[s.dataset].push_back(s);
  }
  for (const auto& tag : tags) {
    SplitSpec sub = spec;
    sub.seed = derive_seed(spec.seed, tag_hash(tag));
    DatasetSplits part = split_dataset(groups[tag], sub);
    for (auto pair : {std::pair{&out.train, &part.train}, std::pair{&out.val, &part.val},
                       std::pair{&out.test, &part.test}})
      for (auto& s : *pair.second) pair.first->push_back(std::move(s));
  }
  return out;
}

std::unique_ptr<DiscrepancyProvider> make_provider(const ExperimentConfig& c) {
  if (c.discrepancy.provider == "files")
    return std::make_unique<FileDiscrepancyProvider>(c.discrepancy.dir);
  return std::make_unique<OracleDiscrepancyProvider>(
      c.discrepancy.noise_level, derive_seed(c.seeds.data, 0xd15c), c.discrepancy.blur_radius);
}

std::vector<ImageSample> raw_samples(const ExperimentConfig& c) {
  std::vector<ImageSample> samples;
  if (c.data.source == "synthetic") {
    samples = generate_synthetic_dataset(c.scene_spec(), c.data.n_normal, c.data.n_anomaly);
  } else {
    samples = load_samples(load_manifest(c.data.manifest), c.vae.image_size);
  }
  if (c.data.min_anomaly_pixels > 0) samples = filter_by_anomaly_pixels(samples, c.data.min_anomaly_pixels);
  if (c.data.per_dataset_cap > 0) {
    std::map<std::string, int> seen;
    std::vector<ImageSample> kept;
    for (auto& s : samples)
      if (seen[s.dataset]++ < c.data.per_dataset_cap) kept.push_back(std::move(s));
    samples = std::move(kept);
  }
  return samples;
}

LatentBatch encode_all(const ConditionedVae& model, const Tensor& x) {
  const Shape4 ls{x.n(), model.spec().latent_channels, kLatentSide, kLatentSide};
  LatentBatch out{Tensor(ls), Tensor(ls)};
  for (int first = 0; first < x.n(); first += kEvalBatch) {
    const int count = std::min(kEvalBatch, x.n() - first);
    const LatentBatch part = model.encode(x.slice(first, count));
    std::copy(part.mu.vec().begin(), part.mu.vec().end(),
              out.mu.data() + first * ls.per_sample());
    std::copy(part.logvar.vec().begin(), part.logvar.vec().end(),
              out.logvar.data() + first * ls.per_sample());
  }
  return out;
}

Tensor decode_all(const ConditionedVae& model, const Tensor& z, int channels, int size) {
  Tensor out(z.n(), channels, size, size);
  const std::size_t per = out.shape().per_sample();
  for (int first = 0; first < z.n(); first += kEvalBatch) {
    const int count = std::min(kEvalBatch, z.n() - first);
    const Tensor part = model.decode(z.slice(first, count));
    std::copy(part.vec().begin(), part.vec().end(), out.data() + first * per);
  }
  return out;
}

void write_jsonl_line(std::ofstream& out, long step, const LossBreakdown& b) {
  json j = breakdown_json(b);
  j["step"] = step;
  out << j.dump() << '\n';
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ------------------------------------------------------------------ data

Tensor to_tensor(const std::vector<ImageSample>& samples) {
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return to_tensor(samples, idx);
}

Tensor to_tensor(const std::vector<ImageSample>& samples, const std::vector<std::size_t>& index) {
  if (index.empty()) throw DataError("to_tensor: no samples");
  const ImageSample& first = samples.at(index[0]);
  const int C = first.channels, H = first.height, W = first.width;
  Tensor t(static_cast<int>(index.size()), C, H, W);
  for (std::size_t b = 0; b < index.size(); ++b) {
    const ImageSample& s = samples.at(index[b]);
    if (s.channels != C || s.height != H || s.width != W)
      throw ShapeError("to_tensor: sample " + s.id + " has a different shape");
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < C; ++c) t.at(static_cast<int>(b), c, y, x) = s.px(y, x, c);
  }
  return t;
}

std::vector<Label> labels_of(const std::vector<ImageSample>& samples) {
  std::vector<Label> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

PointMatrix flatten_latents(const Tensor& mu) {
  const auto per = static_cast<Eigen::Index>(mu.shape().per_sample());
  return Eigen::Map<const PointMatrix>(mu.data(), mu.n(), per);
}

DatasetSplits prepare_data(const ExperimentConfig& c) {
  c.validate();
  const auto samples = raw_samples(c);
  if (samples.empty()) throw DataError("dataset is empty");
  DatasetSplits splits = split_per_dataset(samples, c.split);
  if (c.ablation.use_discrepancy) {
    const auto provider = make_provider(c);
    for (auto* part : {&splits.train, &splits.val, &splits.test})
      for (auto& s : *part) s = attach_fourth_channel(s, provider->provide(s));
  }
  return splits;
}

// ------------------------------------------------------------------ checkpoints

void save_checkpoint(const fs::path& path, const ConditionedVae& model,
                     const ExperimentConfig& config, int epoch) {
  Archive a = model.to_archive();
  a.metadata["config"] = config_to_json(config);
  a.metadata["config_hash"] = config.hash();
  a.metadata["epoch"] = epoch;
  write_archive(path, a);
}

ConditionedVae load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return ConditionedVae::from_archive(read_archive(path));
}

// ------------------------------------------------------------------ training

TrainResult train_model(const ExperimentConfig& c, const DatasetSplits& data, const fs::path& dir,
                        const ProgressFn& progress) {
  c.validate();
  const auto& train = data.train;
  if (train.empty()) throw DataError("training split is empty");
  fs::create_directories(dir);

  TrainResult result{ConditionedVae(c.model_spec()), {}, 0, dir / "metrics.jsonl",
                     dir / "checkpoint.clvae"};
  ConditionedVae& model = result.model;
  Adam adam(model.parameters(), c.train.adam);
  const PriorSet priors = PriorSet::symmetric(c.vae.latent_channels, c.prior_delta);
  const LossWeights weights = c.effective_weights();
  const ObjectiveSwitches sw = c.switches();
  std::unique_ptr<PerceptualBackbone> backbone;
  if (sw.perceptual) backbone = std::make_unique<PerceptualBackbone>(c.seeds.backbone);

  std::vector<std::size_t> normal_idx, anomaly_idx;
  for (std::size_t i = 0; i < train.size(); ++i)
    (train[i].label == Label::Anomaly ? anomaly_idx : normal_idx).push_back(i);
  const int B = c.train.batch_size;
  const bool mixed = c.train.anomaly_fraction >= 0;
  const int n_anom_batch =
      mixed ? static_cast<int>(std::lround(c.train.anomaly_fraction * B)) : 0;
  if (mixed && n_anom_batch > 0 && anomaly_idx.empty())
    throw DataError("anomaly_fraction > 0 but the training split has no anomalies");
  if (mixed && n_anom_batch < B && normal_idx.empty())
    throw DataError("anomaly_fraction < 1 but the training split has no normal samples");
  long steps_per_epoch;
  if (!mixed) {
    steps_per_epoch = (static_cast<long>(train.size()) + B - 1) / B;
  } else if (n_anom_batch == B) {
    steps_per_epoch = (static_cast<long>(anomaly_idx.size()) + B - 1) / B;
  } else {
    steps_per_epoch = (static_cast<long>(normal_idx.size()) + (B - n_anom_batch) - 1) / (B - n_anom_batch);
  }
  const long total_steps = steps_per_epoch * c.train.epochs;

  const Tensor all_x = to_tensor(train);
  Rng order_rng(derive_seed(c.seeds.model, 0x0bd3));
  Rng noise_rng(derive_seed(c.seeds.model, 0x7a17));
  std::ofstream log(result.metrics_log, std::ios::trunc);
  if (!log) throw DataError("cannot write " + result.metrics_log.string());

  std::vector<std::size_t> assigned;  // cluster index per training sample
  ClusterModel clusters;

  for (int epoch = 1; epoch <= c.train.epochs; ++epoch) {
    if (sw.cluster) {
      const PointMatrix pts = flatten_latents(encode_all(model, all_x).mu);
      KMeansOptions ko;
      ko.k = 2;
      ko.seed = derive_seed(c.seeds.model, 0x6b6d + static_cast<std::uint64_t>(epoch));
      clusters = kmeans_fit(pts, ko);
      assigned.assign(train.size(), 0);
      for (std::size_t i = 0; i < train.size(); ++i)
        assigned[i] = static_cast<std::size_t>(clusters.nearest(pts.row(static_cast<Eigen::Index>(i))));
    }

    std::vector<std::vector<std::size_t>> batches;
    if (!mixed) {
      std::vector<std::size_t> order(train.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      order_rng.shuffle(order.begin(), order.end());
      for (std::size_t i = 0; i < order.size(); i += B)
        batches.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + B));
    } else {
      std::vector<std::size_t> normals = normal_idx;
      order_rng.shuffle(normals.begin(), normals.end());
      std::size_t pos = 0;
      for (long s = 0; s < steps_per_epoch; ++s) {
        std::vector<std::size_t> batch;
        for (int k = 0; k < B - n_anom_batch && pos < normals.size(); ++k) batch.push_back(normals[pos++]);
        for (int k = 0; k < n_anom_batch; ++k)
          batch.push_back(anomaly_idx[order_rng.below(anomaly_idx.size())]);
        batches.push_back(std::move(batch));
      }
    }

    EpochSummary summary;
    summary.epoch = epoch;
    for (const auto& batch : batches) {
      const Tensor x = to_tensor(train, batch);
      std::vector<Label> labels;
      for (std::size_t i : batch) labels.push_back(train[i].label);

      nn::ForwardContext ctx{nn::Mode::Train, &noise_rng};
      nn::LayerCache etape, dtape;
      const LatentBatch lat = model.encode(x, ctx, &etape);
      Tensor eps(lat.mu.shape());
      for (auto& v : eps.vec()) v = noise_rng.normal();
      const Tensor z = reparameterize(lat.mu, lat.logvar, eps);
      const Tensor xhat = model.decode(z, ctx, &dtape);
      const Tensor prior = prior_means_for(labels, priors);
      Tensor cluster_means;
      if (sw.cluster) {
        cluster_means = Tensor(lat.mu.shape());
        const std::size_t per = lat.mu.shape().per_sample();
        for (std::size_t b = 0; b < batch.size(); ++b)
          for (std::size_t i = 0; i < per; ++i)
            cluster_means[b * per + i] =
                clusters.centroids(static_cast<Eigen::Index>(assigned[batch[b]]), static_cast<Eigen::Index>(i));
      }
      ObjectiveInputs in{&x, &xhat, &lat.mu, &lat.logvar, &prior, &labels,
                         sw.cluster ? &cluster_means : nullptr};
      ObjectiveResult r;
      try {
        r = evaluate_objective(in, weights, sw, backbone.get());
      } catch (const NumericalError& e) {
        log.flush();
        throw NumericalError(std::string("training aborted at step ") +
                             std::to_string(result.steps + 1) + ": " + e.what());
      }

      model.zero_grad();
      const Tensor dz = model.backward_decoder(r.grad_xhat, dtape);
      Tensor grad_mu = r.grad_mu, grad_lv = r.grad_logvar;
      for (std::size_t i = 0; i < dz.size(); ++i) {
        grad_mu[i] += dz[i];
        grad_lv[i] += dz[i] * eps[i] * 0.5 * std::exp(0.5 * lat.logvar[i]);
      }
      model.backward_encoder(grad_mu, grad_lv, etape);
      const double lr = c.train.linear_decay ? linear_decay_lr(c.train.lr, result.steps, total_steps)
                                             : c.train.lr;
      adam.step(lr);
      ++model.step;
      ++result.steps;
      if (!model.all_finite()) {
        log.flush();
        throw NumericalError("non-finite weights after step " + std::to_string(result.steps));
      }

      write_jsonl_line(log, result.steps, r.breakdown);
      const LossBreakdown& b = r.breakdown;
      summary.mean.recon += b.recon;
      summary.mean.kl += b.kl;
      summary.mean.distance += b.distance;
      summary.mean.cluster += b.cluster;
      summary.mean.perceptual += b.perceptual;
      summary.mean.total += b.total;
      ++summary.steps;
    }
    const double inv = 1.0 / std::max(summary.steps, 1);
    for (double* v : {&summary.mean.recon, &summary.mean.kl, &summary.mean.distance,
                      &summary.mean.cluster, &summary.mean.perceptual, &summary.mean.total})
      *v *= inv;
    result.epochs.push_back(summary);
    log.flush();
    if (progress) progress(summary);
    if (c.train.checkpoint_every > 0 && epoch % c.train.checkpoint_every == 0 &&
        epoch != c.train.epochs)
      save_checkpoint(result.checkpoint, model, c, epoch);
  }
  save_checkpoint(result.checkpoint, model, c, c.train.epochs);
  write_text(dir / "train_summary.json",
             json{{"config_hash", c.hash()}, {"steps", result.steps},
                  {"epochs", epochs_json(result.epochs)}}.dump(2) + "\n");
  return result;
}

// ------------------------------------------------------------------ evaluation

json EvalReport::to_json() const {
  json roc_pts = json::array();
  for (const auto& p : roc.points)
    roc_pts.push_back({std::isinf(p.threshold) ? json(nullptr) : json(p.threshold), p.fpr, p.tpr});
  std::vector<std::string> mapping;
  for (Label l : clusters.cluster_to_label) mapping.emplace_back(clvae::to_string(l));
  return json{{"config_hash", config_hash},
              {"fid", fid},
              {"mse", mse},
              {"auroc", auroc},
              {"tpr", tpr},
              {"fpr", fpr},
              {"accuracy", accuracy},
              {"train", {{"tpr", train_tpr}, {"fpr", train_fpr}, {"accuracy", train_accuracy}}},
              {"n_test", n_test},
              {"wall_clock_seconds", wall_clock_seconds},
              {"epochs", epochs_json(epochs)},
              {"scatter_path", scatter_path},
              {"roc", {{"auc", roc.auc}, {"points", roc_pts}}},
              {"clusters",
               {{"k", clusters.k},
                {"inertia", clusters.inertia},
                {"iterations", clusters.iterations},
                {"seed", clusters.seed},
                {"cluster_to_label", mapping}}}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.fid = j.at("fid").get<double>();
  r.mse = j.at("mse").get<double>();
  r.auroc = j.at("auroc").get<double>();
  r.tpr = j.at("tpr").get<double>();
  r.fpr = j.at("fpr").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.train_tpr = j.at("train").at("tpr").get<double>();
  r.train_fpr = j.at("train").at("fpr").get<double>();
  r.train_accuracy = j.at("train").at("accuracy").get<double>();
  r.n_test = j.at("n_test").get<std::size_t>();
  r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  r.epochs = epochs_from(j.at("epochs"));
  r.scatter_path = j.at("scatter_path").get<std::string>();
  r.roc.auc = j.at("roc").at("auc").get<double>();
  for (const auto& p : j.at("roc").at("points"))
    r.roc.points.push_back({p[0].is_null() ? std::numeric_limits<double>::infinity()
                                           : p[0].get<double>(),
                            p[1].get<double>(), p[2].get<double>()});
  const json& cl = j.at("clusters");
  r.clusters.k = cl.at("k").get<int>();
  r.clusters.inertia = cl.at("inertia").get<double>();
  r.clusters.iterations = cl.at("iterations").get<int>();
  r.clusters.seed = cl.at("seed").get<std::uint64_t>();
  for (const auto& s : cl.at("cluster_to_label"))
    r.clusters.cluster_to_label.push_back(parse_label(s.get<std::string>()));
  return r;
}

EvalReport evaluate_model(const ExperimentConfig& c, const ConditionedVae& model,
                          const DatasetSplits& data, const fs::path& dir) {
  if (model.spec().input_channels != c.model_spec().input_channels)
    throw ConfigError("checkpoint input channels do not match the configuration");
  if (data.train.empty() || data.test.empty()) throw DataError("evaluation needs train and test splits");
  fs::create_directories(dir);
  EvalReport rep;
  rep.config_hash = c.hash();

  const Tensor xtrain = to_tensor(data.train);
  const Tensor xtest = to_tensor(data.test);
  const auto ytrain = labels_of(data.train);
  const auto ytest = labels_of(data.test);

  const PointMatrix ptrain = flatten_latents(encode_all(model, xtrain).mu);
  const Tensor mu_test = encode_all(model, xtest).mu;
  const PointMatrix ptest = flatten_latents(mu_test);

  KMeansOptions ko;
  ko.k = c.kmeans_k;
  ko.seed = derive_seed(c.seeds.model, 0x6b6d);
  rep.clusters = map_clusters_to_labels(kmeans_fit(ptrain, ko), ptrain, ytrain);

  auto predict = [&](const PointMatrix& pts) {
    std::vector<Label> out;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) out.push_back(classify(rep.clusters, pts.row(i)));
    return out;
  };
  const auto pred_test = predict(ptest);
  const auto pred_train = predict(ptrain);
  const Rates rt = tpr_fpr(pred_test, ytest);
  rep.tpr = rt.tpr;
  rep.fpr = rt.fpr;
  rep.accuracy = accuracy(pred_test, ytest);
  const Rates rtr = tpr_fpr(pred_train, ytrain);
  rep.train_tpr = rtr.tpr;
  rep.train_fpr = rtr.fpr;
  rep.train_accuracy = accuracy(pred_train, ytrain);
  rep.n_test = data.test.size();

  // Anomaly score: distance to the nearest normal-mapped centroid.
  std::vector<double> scores;
  for (Eigen::Index i = 0; i < ptest.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < rep.clusters.k; ++k)
      if (rep.clusters.cluster_to_label[k] == Label::Normal)
        best = std::min(best, (rep.clusters.centroids.row(k) - ptest.row(i)).norm());
    scores.push_back(best);
  }
  rep.roc = roc_curve(scores, ytest);
  rep.auroc = rep.roc.auc;

  const Tensor recon = decode_all(model, mu_test, xtest.c(), xtest.h());
  const Tensor x_rgb = xtest.c() == 3 ? xtest : xtest.channels(0, 3);
  const Tensor r_rgb = recon.c() == 3 ? recon : recon.channels(0, 3);
  rep.mse = reconstruction_loss(x_rgb, r_rgb);
  const PerceptualBackbone backbone(c.seeds.backbone);
  rep.fid = fid(x_rgb, r_rgb, backbone);
  if (!std::isfinite(rep.mse) || !std::isfinite(rep.fid)) throw NumericalError("non-finite evaluation metric");

  // Exports.
  write_text(dir / "roc.csv", roc_csv(rep.roc));
  std::string scatter = "id,pc1,pc2,true_label,predicted_label,dataset\n";
  if (ptest.rows() >= 3) {
    const PcaResult pca = pca_fit_project(ptest);
    for (Eigen::Index i = 0; i < ptest.rows(); ++i) {
      const auto& s = data.test[static_cast<std::size_t>(i)];
      scatter += s.id + "," + fmt(pca.coordinates(i, 0)) + "," + fmt(pca.coordinates(i, 1)) + "," +
                 std::string(clvae::to_string(s.label)) + "," +
                 std::string(clvae::to_string(pred_test[static_cast<std::size_t>(i)])) + "," +
                 s.dataset + "\n";
    }
  }
  write_text(dir / "scatter.csv", scatter);
  rep.scatter_path = (dir / "scatter.csv").string();

  const auto provider = make_provider(c);
  std::map<std::string, std::vector<double>> by_tag;
  for (const auto& s : data.test) {
    const ImageSample rgb = s.channels == 4 ? strip_fourth_channel(s) : s;
    by_tag[s.dataset].push_back(mean_anomaly_score(provider->provide(rgb)));
  }
  std::string box = stats_csv_header() + "\n";
  for (const auto& [tag, v] : by_tag) box += stats_csv_row(tag, score_distribution_stats(v)) + "\n";
  write_text(dir / "boxplot.csv", box);

  Archive ca;
  rep.clusters.to_archive(ca, "clusters");
  ca.metadata["config_hash"] = rep.config_hash;
  write_archive(dir / "clusters.clvae", ca);
  return rep;
}

// ------------------------------------------------------------------ commands

fs::path prepare_run_dir(const ExperimentConfig& c) {
  c.validate();
  const fs::path dir = c.run_dir();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
  write_text(dir / "config.json", config_to_json(c).dump(2) + "\n");
  return dir;
}

fs::path cmd_generate(const ExperimentConfig& c) {
  if (c.data.source != "synthetic") throw ConfigError("generate needs data.source = synthetic");
  const fs::path dir = prepare_run_dir(c);
  const fs::path data_dir = dir / "data";
  fs::create_directories(data_dir / "images");
  fs::create_directories(data_dir / "masks");
  auto samples = raw_samples(c);
  DatasetManifest manifest;
  if (!samples.empty()) {
    const DatasetSplits splits = split_per_dataset(samples, c.split);
    std::map<std::string, Split> split_of;
    for (const auto* part : {&splits.train, &splits.val, &splits.test})
      for (const auto& s : *part) split_of[s.id] = s.split;
    for (const auto& s : samples) {
      RawImage img{s.width, s.height, 3, std::vector<std::uint8_t>(s.pixels.size())};
      for (std::size_t i = 0; i < s.pixels.size(); ++i)
        img.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(s.pixels[i], 0.0f, 1.0f) * 255.0f));
      const fs::path image_rel = fs::path("images") / (s.id + ".png");
      write_png(data_dir / image_rel, img);
      ManifestEntry e;
      e.image = image_rel;
      if (s.anomaly_mask) {
        RawImage m{s.width, s.height, 1, std::vector<std::uint8_t>(s.anomaly_mask->size())};
        for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = (*s.anomaly_mask)[i] ? 255 : 0;
        const fs::path mask_rel = fs::path("masks") / (s.id + ".png");
        write_png(data_dir / mask_rel, m);
        e.mask = mask_rel;
      }
      e.label = s.label;
      e.dataset = s.dataset;
      e.split = split_of.at(s.id);
      e.id = s.id;
      manifest.entries.push_back(std::move(e));
    }
  }
  write_manifest(manifest, data_dir / "manifest.jsonl");
  return dir;
}

fs::path cmd_train(const ExperimentConfig& c, const ProgressFn& progress) {
  const fs::path dir = prepare_run_dir(c);
  const DatasetSplits data = prepare_data(c);
  train_model(c, data, dir, progress);
  return dir;
}

fs::path cmd_eval(const ExperimentConfig& c, const fs::path& checkpoint) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = prepare_run_dir(c);
  const fs::path ckpt = checkpoint.empty() ? dir / "checkpoint.clvae" : checkpoint;
  const ConditionedVae model = load_checkpoint(ckpt);
  const DatasetSplits data = prepare_data(c);
  EvalReport rep = evaluate_model(c, model, data, dir);
  if (fs::exists(dir / "train_summary.json")) {
    try {
      rep.epochs = epochs_from(json::parse(read_text(dir / "train_summary.json")).at("epochs"));
    } catch (const json::exception& e) {
      throw DataError(std::string("corrupt train_summary.json: ") + e.what());
    }
  }
  rep.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(dir / "report.json", rep.to_json().dump(2) + "\n");
  return dir;
}

namespace {

// Checks one metrics log against the ablation switches.
std::vector<std::string> check_metrics_log(const fs::path& path, const ObjectiveSwitches& sw) {
  std::vector<std::string> problems;
  std::ifstream in(path);
  if (!in) return {"missing metrics log " + path.string()};
  std::string line;
  long n = 0;
  while (std::getline(in, line)) {
    ++n;
    json j;
    try {
      j = json::parse(line);
      const LossBreakdown b = breakdown_from(j);
      for (double v : {b.recon, b.kl, b.distance, b.cluster, b.perceptual, b.total})
        if (!std::isfinite(v)) problems.push_back("non-finite value at line " + std::to_string(n));
      if (!sw.distance && b.distance != 0.0) problems.push_back("distance term nonzero at line " + std::to_string(n));
      if (!sw.cluster && b.cluster != 0.0) problems.push_back("cluster term nonzero at line " + std::to_string(n));
      if (!sw.perceptual && b.perceptual != 0.0) problems.push_back("perceptual term nonzero at line " + std::to_string(n));
    } catch (const json::exception& e) {
      problems.push_back("corrupt metrics line " + std::to_string(n) + ": " + e.what());
    }
  }
  if (n == 0) problems.push_back("empty metrics log");
  return problems;
}

}  // namespace

fs::path cmd_sweep(const ExperimentConfig& c, const ProgressFn& progress) {
  const fs::path dir = prepare_run_dir(c);
  std::string csv = "axis,value,config_hash,input_channels,fid,mse,auroc,tpr,fpr,accuracy\n";
  json rows = json::array();
  std::vector<std::string> violations;
  for (double v : c.sweep.values) {
    ExperimentConfig child = c;
    if (c.sweep.axis == "beta") {
      child.loss.beta = v;
    } else if (c.sweep.axis == "latent_channels") {
      if (v < 1 || v != std::floor(v)) throw ConfigError("latent_channels values must be positive integers");
      child.vae.latent_channels = static_cast<int>(v);
    } else {
      if (v != 0 && v != 1) throw ConfigError("use_discrepancy values must be 0 or 1");
      child.ablation.use_discrepancy = v != 0;
    }
    child.validate();
    const fs::path run = cmd_train(child, progress);
    cmd_eval(child);
    const EvalReport rep = EvalReport::from_json(json::parse(read_text(run / "report.json")));
    for (const auto& p : check_metrics_log(run / "metrics.jsonl", child.switches()))
      violations.push_back(child.hash() + ": " + p);
    for (double m : {rep.accuracy, rep.tpr, rep.fpr, rep.auroc})
      if (!(m >= 0 && m <= 1)) violations.push_back(child.hash() + ": rate outside [0,1]");
    if (!(rep.fid >= 0) || !(rep.mse >= 0)) violations.push_back(child.hash() + ": negative fid or mse");
    const int channels = child.model_spec().input_channels;
    csv += c.sweep.axis + "," + fmt(v) + "," + child.hash() + "," + std::to_string(channels) + "," +
           fmt(rep.fid) + "," + fmt(rep.mse) + "," + fmt(rep.auroc) + "," + fmt(rep.tpr) + "," +
           fmt(rep.fpr) + "," + fmt(rep.accuracy) + "\n";
    rows.push_back({{"value", v}, {"config_hash", child.hash()}, {"input_channels", channels},
                    {"fid", rep.fid}, {"mse", rep.mse}, {"auroc", rep.auroc}, {"tpr", rep.tpr},
                    {"fpr", rep.fpr}, {"accuracy", rep.accuracy}});
  }
  write_text(dir / "sweep.csv", csv);
  write_text(dir / "sweep.json", json{{"axis", c.sweep.axis}, {"config_hash", c.hash()}, {"rows", rows},
                                      {"violations", violations}}.dump(2) + "\n");
  return dir;
}

fs::path cmd_report(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir) || fs::is_empty(run_dir))
    throw DataError("run directory is missing or empty: " + run_dir.string());
  const fs::path out = run_dir / "report";
  fs::create_directories(out);
  json errors = json::array();
  json bundle;

  std::optional<ExperimentConfig> config;
  try {
    config = load_config(run_dir / "config.json");
    bundle["config_hash"] = config->hash();
    bundle["directory_matches_hash"] = run_dir.filename() == config->hash() ||
                                       fs::path(run_dir).parent_path().filename() == config->hash();
  } catch (const Error& e) {
    errors.push_back({{"file", "config.json"}, {"error", e.what()}});
  }

  if (fs::exists(run_dir / "metrics.jsonl")) {
    std::ifstream in(run_dir / "metrics.jsonl");
    std::string line;
    long n = 0, good = 0;
    LossBreakdown last{};
    while (std::getline(in, line)) {
      ++n;
      try {
        last = breakdown_from(json::parse(line));
        ++good;
      } catch (const json::exception& e) {
        errors.push_back({{"file", "metrics.jsonl"}, {"line", n}, {"error", e.what()}});
      }
    }
    bundle["training"] = {{"steps", good}, {"final", breakdown_json(last)}};
  } else {
    errors.push_back({{"file", "metrics.jsonl"}, {"error", "missing"}});
  }

  if (fs::exists(run_dir / "report.json")) {
    try {
      const EvalReport rep = EvalReport::from_json(json::parse(read_text(run_dir / "report.json")));
      json metrics{{"fid", rep.fid},     {"mse", rep.mse}, {"auroc", rep.auroc},
                   {"tpr", rep.tpr},     {"fpr", rep.fpr}, {"accuracy", rep.accuracy},
                   {"config_hash", rep.config_hash}};
      write_text(out / "metrics.json", metrics.dump(2) + "\n");
      bundle["metrics"] = metrics;
      if (config && rep.config_hash != config->hash())
        errors.push_back({{"file", "report.json"}, {"error", "config hash does not match config.json"}});
    } catch (const std::exception& e) {
      errors.push_back({{"file", "report.json"}, {"error", e.what()}});
    }
  } else {
    errors.push_back({{"file", "report.json"}, {"error", "missing"}});
  }

  json files = json::object();
  for (const char* name : {"roc.csv", "scatter.csv", "boxplot.csv"}) {
    if (fs::exists(run_dir / name)) {
      fs::copy_file(run_dir / name, out / name, fs::copy_options::overwrite_existing);
      files[name] = (out / name).string();
    } else {
      errors.push_back({{"file", name}, {"error", "missing"}});
    }
  }
  if (fs::exists(out / "metrics.json")) files["metrics.json"] = (out / "metrics.json").string();
  bundle["files"] = files;
  bundle["errors"] = errors;
  bundle["complete"] = errors.empty();
  write_text(out / "bundle.json", bundle.dump(2) + "\n");
  return out;
}

std::string file_hash(const fs::path& path) { return fnv1a_hex(read_text(path)); }

}  // namespace clvae
