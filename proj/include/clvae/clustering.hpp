#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "clvae/checkpoint.hpp"
#include "clvae/datamodel.hpp"

namespace clvae {

// Rows are points.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct KMeansOptions {
  int k = 2;
  std::uint64_t seed = 0;
  int max_iterations = 300;
  double tolerance = 1e-6;  // stop when every centroid moves less than this
};

struct ClusterModel {
  int k = 0;
  PointMatrix centroids;                 // k x d
  std::vector<Label> cluster_to_label;   // empty until mapped
  double inertia = 0.0;                  // within-cluster SSE at convergence
  std::vector<double> inertia_history;   // SSE after each assignment step
  int iterations = 0;
  std::uint64_t seed = 0;

  bool fitted() const { return k > 0 && centroids.rows() == k; }
  bool mapped() const { return cluster_to_label.size() == static_cast<std::size_t>(k); }

  int nearest(const Eigen::Ref<const Eigen::RowVectorXd>& point) const;
  // Centroid of the first cluster mapped to `label`.
  Eigen::RowVectorXd centroid_for(Label label) const;

  void to_archive(Archive& archive, const std::string& prefix) const;
  static ClusterModel from_archive(const Archive& archive, const std::string& prefix);
};

// k-means++ seeding followed by Lloyd iterations. Points are visited in a
// canonical (lexicographic) order, so the result does not depend on input order.
ClusterModel kmeans_fit(const PointMatrix& points, const KMeansOptions& options);

// Maps clusters to labels; see the implementation for the tie rules.
ClusterModel map_clusters_to_labels(ClusterModel model, const PointMatrix& points,
                                    const std::vector<Label>& labels);

// Label of the nearest centroid; exact ties go to anomaly.
Label classify(const ClusterModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& point);

struct PcaProjection {
  Eigen::MatrixXd components;            // 2 x d, orthonormal rows
  Eigen::Vector2d explained_variance;    // nonincreasing
  Eigen::RowVectorXd mean;               // 1 x d

  PointMatrix project(const PointMatrix& points) const;
};

struct PcaResult {
  PcaProjection projection;
  PointMatrix coordinates;  // n x 2, input order
};

PcaResult pca_fit_project(const PointMatrix& points);

}  // namespace clvae
