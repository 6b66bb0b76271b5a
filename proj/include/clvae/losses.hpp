#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clvae/datamodel.hpp"
#include "clvae/nn.hpp"
#include "clvae/tensor.hpp"

namespace clvae {

struct LossWeights {
  double beta = 0.01;
  double w_distance = 0.0;
  double w_cluster = 0.0;
  double w_perceptual = 0.5;

  void validate() const;
};

// Unweighted components plus the weighted total.
struct LossBreakdown {
  double recon = 0.0;
  double kl = 0.0;
  double distance = 0.0;
  double cluster = 0.0;
  double perceptual = 0.0;
  double total = 0.0;
};

// Mean squared error over every element.
double reconstruction_loss(const Tensor& x, const Tensor& xhat);
Tensor reconstruction_loss_grad(const Tensor& x, const Tensor& xhat);  // d/dxhat

// 0.5 * sum(exp(logvar) + (mu - m)^2 - 1 - logvar), summed over latent
// elements and averaged over the batch. `prior` is either one mean (n = 1,
// broadcast) or one mean per sample.
double kl_divergence(const Tensor& mu, const Tensor& logvar, const Tensor& prior);
void kl_divergence_grad(const Tensor& mu, const Tensor& logvar, const Tensor& prior,
                        Tensor& grad_mu, Tensor& grad_logvar);

// -sum |mu1_i - mu2_i|.
double distance_loss(std::span<const double> mu1, std::span<const double> mu2);
// Subgradient: d/dmu1 = -sign(mu1 - mu2), d/dmu2 = +sign(mu1 - mu2).
void distance_loss_grad(std::span<const double> mu1, std::span<const double> mu2,
                        std::span<double> grad_mu1, std::span<double> grad_mu2);

// (1/n) * sum_i ||means_i - z_i||^2 with one assigned mean per sample.
double cluster_loss(const Tensor& z, const Tensor& means);
Tensor cluster_loss_grad(const Tensor& z, const Tensor& means);  // d/dz

// Fixed, seeded three-stage CNN standing in for a pretrained feature extractor.
// Accepts RGB input only; taps are the outputs of each stage.
class PerceptualBackbone {
 public:
  explicit PerceptualBackbone(std::uint64_t seed, std::vector<int> widths = {8, 16, 32});

  std::vector<Tensor> features(const Tensor& rgb, std::vector<nn::LayerCache>* tapes) const;
  // Final tap averaged over space: n x width.back() as an n x w x 1 x 1 tensor.
  Tensor pooled_features(const Tensor& rgb) const;

  double loss(const Tensor& x, const Tensor& xhat) const;
  Tensor loss_grad(const Tensor& x, const Tensor& xhat) const;  // d/dxhat

  std::uint64_t seed() const { return seed_; }
  std::size_t tap_count() const { return stages_.size(); }

 private:
  void require_rgb(const Tensor& t) const;

  std::uint64_t seed_;
  std::vector<nn::Sequential> stages_;
};

double perceptual_loss(const PerceptualBackbone& backbone, const Tensor& x_rgb,
                       const Tensor& xhat_rgb);

// Applies the weights to already-computed components; throws NumericalError on
// non-finite input.
LossBreakdown total_loss(const LossBreakdown& components, const LossWeights& weights);

// Everything the composite objective needs for one batch.
struct ObjectiveInputs {
  const Tensor* x = nullptr;       // target, all channels
  const Tensor* xhat = nullptr;    // reconstruction
  const Tensor* mu = nullptr;
  const Tensor* logvar = nullptr;
  const Tensor* prior = nullptr;   // per-sample label-matched prior means
  const std::vector<Label>* labels = nullptr;
  const Tensor* cluster_means = nullptr;  // per-sample assigned centroids (cluster term)
};

struct ObjectiveSwitches {
  bool distance = false;
  bool cluster = false;
  bool perceptual = true;
  double distance_radius = 100.0;  // |distance term| is capped here
  // Reconstruction summed over each sample's elements instead of averaged.
  bool recon_sum = false;
};

struct ObjectiveResult {
  LossBreakdown breakdown;
  Tensor grad_xhat;
  Tensor grad_mu;
  Tensor grad_logvar;
};

// Composite objective with gradients. Disabled terms are reported as exactly 0.
// The distance term compares the per-class batch means of mu; the cluster term
// pulls mu toward its assigned centroid. Perceptual features use channels 0..2.
ObjectiveResult evaluate_objective(const ObjectiveInputs& in, const LossWeights& weights,
                                   const ObjectiveSwitches& switches,
                                   const PerceptualBackbone* backbone);

}  // namespace clvae
