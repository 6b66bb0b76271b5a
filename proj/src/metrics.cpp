#include "clvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <cstdio>
#include <numeric>

#include "clvae/errors.hpp"

namespace clvae {

GaussianStats fit_gaussian_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw DataError("Gaussian statistics need at least 2 samples");
  GaussianStats s;
  s.n = static_cast<std::size_t>(features.rows());
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.covariance = centered.transpose() * centered / static_cast<double>(features.rows() - 1);
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose());
  return s;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size() || a.covariance.rows() != b.covariance.rows())
    throw ShapeError("frechet_distance: dimension mismatch");
  if (a.covariance.rows() != a.mean.size() || b.covariance.rows() != b.mean.size())
    throw ShapeError("frechet_distance: covariance does not match the mean");
  // Tr (S_a S_b)^{1/2} = Tr (A S_b A)^{1/2} with A = S_a^{1/2}; the inner
  // matrix is symmetric PSD, so its eigenvalues give the trace directly.
  const Eigen::MatrixXd ra = psd_sqrt(a.covariance);
  const Eigen::MatrixXd sb = 0.5 * (b.covariance + b.covariance.transpose());
  Eigen::MatrixXd inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
  const double tr_cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double d = mean_term + a.covariance.trace() + sb.trace() - 2.0 * tr_cross;
  return std::max(d, 0.0);
}

Eigen::MatrixXd backbone_features(const Tensor& images, const PerceptualBackbone& backbone) {
  if (images.c() < 3) throw ShapeError("FID needs at least three image channels");
  const Tensor rgb = images.c() == 3 ? images : images.channels(0, 3);
  const Tensor pooled = backbone.pooled_features(rgb);
  Eigen::MatrixXd f(pooled.n(), pooled.c());
  for (int i = 0; i < pooled.n(); ++i)
    for (int c = 0; c < pooled.c(); ++c) f(i, c) = pooled.at(i, c, 0, 0);
  return f;
}

double fid(const Tensor& real, const Tensor& generated, const PerceptualBackbone& backbone) {
  if (real.n() < 2 || generated.n() < 2) throw DataError("FID needs at least 2 images per set");
  return frechet_distance(fit_gaussian_stats(backbone_features(real, backbone)),
                          fit_gaussian_stats(backbone_features(generated, backbone)));
}

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<Label>& labels) {
  if (scores.size() != labels.size()) throw DataError("roc_curve: score and label counts differ");
  std::size_t pos = 0;
  for (Label l : labels) pos += l == Label::Anomaly;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw DataError("roc_curve needs both labels present");
  for (double s : scores)
    if (std::isnan(s)) throw NumericalError("roc_curve: NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  // Twice the area in units of one (positive, negative) pair; divided once at
  // the end so the AUC is the correctly rounded rational.
  std::uint64_t area2 = 0;
  std::size_t tp = 0, fp = 0, prev_tp = 0, prev_fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      (labels[order[i]] == Label::Anomaly ? tp : fp)++;
      ++i;
    }
    area2 += (fp - prev_fp) * (tp + prev_tp);
    prev_fp = fp;
    prev_tp = tp;
    curve.points.push_back({thr, static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
  }
  curve.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

std::string roc_csv(const RocCurve& curve) {
  std::string out = "threshold,fpr,tpr\n";
  char buf[128];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.threshold, p.fpr, p.tpr);
    out += buf;
  }
  return out;
}

Rates tpr_fpr(const std::vector<Label>& predicted, const std::vector<Label>& truth) {
  if (predicted.size() != truth.size()) throw DataError("tpr_fpr: list lengths differ");
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] == Label::Anomaly;
    if (truth[i] == Label::Anomaly)
      (p ? tp : fn)++;
    else
      (p ? fp : tn)++;
  }
  if (tp + fn == 0) throw DataError("tpr undefined: no anomalous samples");
  if (fp + tn == 0) throw DataError("fpr undefined: no normal samples");
  return {static_cast<double>(tp) / (tp + fn), static_cast<double>(fp) / (fp + tn)};
}

double accuracy(const std::vector<Label>& predicted, const std::vector<Label>& truth) {
  if (predicted.size() != truth.size() || truth.empty())
    throw DataError("accuracy: lists empty or of different length");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) ok += predicted[i] == truth[i];
  return static_cast<double>(ok) / truth.size();
}

}  // namespace clvae
