#include "clvae/clustering.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "clvae/errors.hpp"
#include "clvae/rng.hpp"

namespace clvae {

namespace {

std::vector<std::size_t> canonical_order(const PointMatrix& points) {
  std::vector<std::size_t> order(static_cast<std::size_t>(points.rows()));
  std::iota(order.begin(), order.end(), 0);
  const auto d = points.cols();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double x = points(static_cast<Eigen::Index>(a), j);
      const double y = points(static_cast<Eigen::Index>(b), j);
      if (x != y) return x < y;
    }
    return false;
  });
  return order;
}

std::size_t count_distinct(const PointMatrix& points, const std::vector<std::size_t>& order) {
  std::size_t distinct = order.empty() ? 0 : 1;
  for (std::size_t i = 1; i < order.size(); ++i)
    if (points.row(static_cast<Eigen::Index>(order[i])) !=
        points.row(static_cast<Eigen::Index>(order[i - 1])))
      ++distinct;
  return distinct;
}

// Nearest centroid with ties resolved to the lower index.
std::pair<int, double> nearest_centroid(const PointMatrix& centroids,
                                        const Eigen::Ref<const Eigen::RowVectorXd>& p) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return {best, best_d};
}

}  // namespace

int ClusterModel::nearest(const Eigen::Ref<const Eigen::RowVectorXd>& point) const {
  return nearest_centroid(centroids, point).first;
}

Eigen::RowVectorXd ClusterModel::centroid_for(Label label) const {
  if (!mapped()) throw DataError("cluster model has no label mapping");
  for (int c = 0; c < k; ++c)
    if (cluster_to_label[c] == label) return centroids.row(c);
  throw DataError("no cluster is mapped to label " + std::string(to_string(label)));
}

ClusterModel kmeans_fit(const PointMatrix& points, const KMeansOptions& opt) {
  if (opt.k < 1) throw ConfigError("k-means needs k >= 1");
  const auto order = canonical_order(points);
  if (count_distinct(points, order) < static_cast<std::size_t>(opt.k))
    throw DataError("k-means needs at least " + std::to_string(opt.k) + " distinct points");
  const Eigen::Index n = points.rows(), d = points.cols();

  ClusterModel model;
  model.k = opt.k;
  model.seed = opt.seed;
  model.centroids.resize(opt.k, d);

  // k-means++ seeding over the canonical order.
  Rng rng(opt.seed);
  std::vector<double> dist2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::size_t pick = order[rng.below(static_cast<std::uint64_t>(n))];
  for (int c = 0; c < opt.k; ++c) {
    model.centroids.row(c) = points.row(static_cast<Eigen::Index>(pick));
    double total = 0;
    for (std::size_t i : order) {
      const double dd = (points.row(static_cast<Eigen::Index>(i)) - model.centroids.row(c))
                            .squaredNorm();
      dist2[i] = std::min(dist2[i], dd);
      total += dist2[i];
    }
    if (c + 1 == opt.k) break;
    double u = rng.uniform() * total;
    pick = order.back();
    for (std::size_t i : order) {
      if (dist2[i] <= 0) continue;
      pick = i;
      if (u < dist2[i]) break;
      u -= dist2[i];
    }
  }

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  auto assign_all = [&] {
    double sse = 0;
    for (std::size_t i : order) {
      const auto [c, dd] = nearest_centroid(model.centroids, points.row(static_cast<Eigen::Index>(i)));
      assign[i] = c;
      sse += dd;
    }
    return sse;
  };

  for (model.iterations = 0; model.iterations < opt.max_iterations; ++model.iterations) {
    model.inertia_history.push_back(assign_all());
    PointMatrix next = PointMatrix::Zero(opt.k, d);
    std::vector<int> counts(static_cast<std::size_t>(opt.k), 0);
    for (std::size_t i : order) {
      next.row(assign[i]) += points.row(static_cast<Eigen::Index>(i));
      ++counts[assign[i]];
    }
    for (int c = 0; c < opt.k; ++c) {
      if (counts[c] > 0) {
        next.row(c) /= counts[c];
        continue;
      }
      // Empty cluster: restart it at the point farthest from its centroid.
      std::size_t far = order.front();
      double far_d = -1;
      for (std::size_t i : order) {
        const double dd = (points.row(static_cast<Eigen::Index>(i)) -
                           model.centroids.row(assign[i])).squaredNorm();
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      next.row(c) = points.row(static_cast<Eigen::Index>(far));
    }
    double shift = 0;
    for (int c = 0; c < opt.k; ++c)
      shift = std::max(shift, (next.row(c) - model.centroids.row(c)).norm());
    model.centroids = std::move(next);
    if (shift < opt.tolerance) {
      ++model.iterations;
      break;
    }
  }
  model.inertia = assign_all();
  model.inertia_history.push_back(model.inertia);
  return model;
}

ClusterModel map_clusters_to_labels(ClusterModel model, const PointMatrix& points,
                                    const std::vector<Label>& labels) {
  if (!model.fitted()) throw DataError("map_clusters_to_labels: model is not fitted");
  if (points.rows() == 0 || labels.empty())
    throw DataError("map_clusters_to_labels: empty input");
  if (static_cast<std::size_t>(points.rows()) != labels.size())
    throw DataError("map_clusters_to_labels: point and label counts differ");

  std::vector<int> normal(static_cast<std::size_t>(model.k), 0), anomaly(model.k, 0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int c = model.nearest(points.row(i));
    (labels[static_cast<std::size_t>(i)] == Label::Anomaly ? anomaly : normal)[c]++;
  }
  const bool both_present =
      std::accumulate(normal.begin(), normal.end(), 0) > 0 &&
      std::accumulate(anomaly.begin(), anomaly.end(), 0) > 0;
  auto frac = [&](int c) {
    const int total = normal[c] + anomaly[c];
    return total == 0 ? -1.0 : static_cast<double>(anomaly[c]) / total;
  };

  model.cluster_to_label.assign(static_cast<std::size_t>(model.k), Label::Normal);
  if (model.k == 2 && both_present) {
    // Bijection: the cluster with the larger anomaly fraction is the anomaly
    // cluster. This is the majority mapping whenever the majorities differ, and
    // decides 50/50 ties and shared majorities. Equal fractions: cluster 1.
    const int anomalous = frac(0) > frac(1) ? 0 : 1;
    model.cluster_to_label[anomalous] = Label::Anomaly;
  } else {
    for (int c = 0; c < model.k; ++c)
      if (normal[c] + anomaly[c] > 0 && anomaly[c] >= normal[c])
        model.cluster_to_label[c] = Label::Anomaly;
  }
  return model;
}

Label classify(const ClusterModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& point) {
  if (!model.fitted() || !model.mapped())
    throw DataError("classify: cluster model is not fitted and mapped");
  if (point.size() != model.centroids.cols())
    throw ShapeError("classify: point dimension does not match centroids");
  double best = std::numeric_limits<double>::infinity();
  bool normal_at_best = false, anomaly_at_best = false;
  for (int c = 0; c < model.k; ++c) {
    const double d = (model.centroids.row(c) - point).squaredNorm();
    if (d < best) {
      best = d;
      normal_at_best = anomaly_at_best = false;
    }
    if (d == best) (model.cluster_to_label[c] == Label::Anomaly ? anomaly_at_best : normal_at_best) = true;
  }
  return anomaly_at_best ? Label::Anomaly : Label::Normal;
}

void ClusterModel::to_archive(Archive& archive, const std::string& prefix) const {
  nlohmann::json meta{{"k", k}, {"inertia", inertia}, {"iterations", iterations},
                      {"seed", seed}};
  std::vector<std::string> mapping;
  for (Label l : cluster_to_label) mapping.emplace_back(to_string(l));
  meta["cluster_to_label"] = mapping;
  archive.metadata[prefix] = meta;
  NamedArray arr{prefix + ".centroids", {centroids.rows(), centroids.cols()}, {}};
  arr.data.assign(centroids.data(), centroids.data() + centroids.size());
  archive.arrays.push_back(std::move(arr));
}

ClusterModel ClusterModel::from_archive(const Archive& archive, const std::string& prefix) {
  if (!archive.metadata.contains(prefix)) throw DataError("archive has no cluster model");
  const auto& meta = archive.metadata.at(prefix);
  ClusterModel m;
  m.k = meta.at("k").get<int>();
  m.inertia = meta.at("inertia").get<double>();
  m.iterations = meta.at("iterations").get<int>();
  m.seed = meta.at("seed").get<std::uint64_t>();
  for (const auto& s : meta.at("cluster_to_label")) m.cluster_to_label.push_back(parse_label(s.get<std::string>()));
  const NamedArray& arr = archive.get(prefix + ".centroids");
  if (arr.dims.size() != 2 || arr.dims[0] != m.k) throw DataError("bad centroid array");
  m.centroids = Eigen::Map<const PointMatrix>(arr.data.data(), arr.dims[0], arr.dims[1]);
  return m;
}

// ------------------------------------------------------------------ PCA

PointMatrix PcaProjection::project(const PointMatrix& points) const {
  if (points.cols() != mean.size()) throw ShapeError("PCA projection dimension mismatch");
  return (points.rowwise() - mean) * components.transpose();
}

PcaResult pca_fit_project(const PointMatrix& points) {
  const Eigen::Index n = points.rows(), d = points.cols();
  if (n < 3) throw DataError("PCA needs at least 3 points");
  if (d < 1) throw DataError("PCA needs at least one dimension");
  PcaProjection proj;
  proj.mean = points.colwise().mean();
  const Eigen::MatrixXd centered = points.rowwise() - proj.mean;

  Eigen::MatrixXd comps(2, d);
  Eigen::Vector2d var(0, 0);
  const int wanted = static_cast<int>(std::min<Eigen::Index>(2, d));
  if (n - 1 < d) {
    // Few points in a high-dimensional space: eigendecompose the Gram matrix.
    const Eigen::MatrixXd gram = centered * centered.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    for (int k = 0; k < wanted; ++k) {
      const Eigen::Index idx = n - 1 - k;
      const double lambda = std::max(eig.eigenvalues()(idx), 0.0);
      var(k) = lambda / static_cast<double>(n - 1);
      Eigen::VectorXd v = centered.transpose() * eig.eigenvectors().col(idx);
      comps.row(k) = v.transpose();
    }
  } else {
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    for (int k = 0; k < wanted; ++k) {
      const Eigen::Index idx = d - 1 - k;
      var(k) = std::max(eig.eigenvalues()(idx), 0.0);
      comps.row(k) = eig.eigenvectors().col(idx).transpose();
    }
  }
  if (wanted < 2) {
    comps.row(1).setZero();
    var(1) = 0;
  }
  const double scale = std::max(var(0), std::numeric_limits<double>::min());
  for (int k = 0; k < 2; ++k)
    if (var(k) <= 1e-12 * scale) var(k) = 0;

  // Gram-Schmidt; a degenerate direction is completed with a unit axis.
  for (int k = 0; k < wanted; ++k) {
    Eigen::RowVectorXd v = comps.row(k);
    for (int j = 0; j < k; ++j) v -= v.dot(comps.row(j)) * comps.row(j);
    if (var(k) == 0 || v.norm() < 1e-8) {
      for (Eigen::Index axis = 0; axis < d; ++axis) {
        v = Eigen::RowVectorXd::Unit(d, axis);
        for (int j = 0; j < k; ++j) v -= v.dot(comps.row(j)) * comps.row(j);
        if (v.norm() > 0.5) break;
      }
    }
    v.normalize();
    for (int j = 0; j < k; ++j) v -= v.dot(comps.row(j)) * comps.row(j);
    comps.row(k) = v.normalized();
  }
  proj.components = comps;
  proj.explained_variance = var;
  PcaResult result{proj, proj.project(points)};
  return result;
}

}  // namespace clvae
