#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "clvae/datamodel.hpp"
#include "clvae/losses.hpp"

namespace clvae {

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // unbiased
  std::size_t n = 0;
};

// Rows are observations.
GaussianStats fit_gaussian_stats(const Eigen::MatrixXd& features);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), clipped at 0.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Symmetric PSD square root; eigenvalues below zero are clipped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

// Frechet distance between pooled final-tap backbone features. Images are
// n x C x H x W with C >= 3; only the first three channels are used.
double fid(const Tensor& real, const Tensor& generated, const PerceptualBackbone& backbone);
Eigen::MatrixXd backbone_features(const Tensor& images, const PerceptualBackbone& backbone);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // starts at (0,0), ends at (1,1)
  double auc = 0.0;
};

// Higher score means more anomalous. Equal scores form one step.
RocCurve roc_curve(const std::vector<double>& scores, const std::vector<Label>& labels);
std::string roc_csv(const RocCurve& curve);

struct Rates {
  double tpr = 0.0;
  double fpr = 0.0;
};

// Anomaly is the positive class.
Rates tpr_fpr(const std::vector<Label>& predicted, const std::vector<Label>& truth);
double accuracy(const std::vector<Label>& predicted, const std::vector<Label>& truth);

}  // namespace clvae
