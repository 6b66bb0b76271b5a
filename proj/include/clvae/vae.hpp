#pragma once

#include <cstdint>
#include <vector>

#include "clvae/checkpoint.hpp"
#include "clvae/datamodel.hpp"
#include "clvae/nn.hpp"
#include "clvae/tensor.hpp"

namespace clvae {

inline constexpr int kLatentSide = 4;

struct VaeSpec {
  int input_channels = 3;
  int latent_channels = 64;
  int image_size = 64;
  std::vector<int> widths{8, 16, 32, 64};  // per encoder stage; last entry repeats
  double rrelu_lower = 1.0 / 8.0;
  double rrelu_upper = 1.0 / 3.0;
  bool extra_pool = false;  // avg-pool after the second stage, third stage stride 1
  std::uint64_t seed = 1;

  int stages() const;  // log2(image_size / 4)
  int width(int stage) const;
  void validate() const;
};

// Batched posterior parameters, each n x z x 4 x 4.
struct LatentBatch {
  Tensor mu;
  Tensor logvar;
};

// Batched code with the noise used to draw it.
struct LatentCode {
  Tensor mu;
  Tensor logvar;
  Tensor sample;
  Tensor eps;
};

// Class-conditional prior means, each 1 x z x 4 x 4, identity covariance.
struct PriorSet {
  Tensor m_normal;
  Tensor m_anomaly;

  // -delta / +delta on every position of the first latent channel, zero elsewhere.
  static PriorSet symmetric(int latent_channels, double delta);
  void validate() const;
};

const Tensor& prior_mean_for(Label label, const PriorSet& priors);

// Stacks the label-matched prior mean of each sample into an n x z x 4 x 4 tensor.
Tensor prior_means_for(const std::vector<Label>& labels, const PriorSet& priors);

// z = mu + exp(logvar / 2) * eps, elementwise.
Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& eps);

// Residual convolutional VAE with a z x 4 x 4 latent map.
class ConditionedVae {
 public:
  explicit ConditionedVae(VaeSpec spec);

  const VaeSpec& spec() const { return spec_; }

  // Forward passes. A non-null tape records what backward needs.
  LatentBatch encode(const Tensor& x, nn::ForwardContext& ctx, nn::LayerCache* tape) const;
  Tensor decode(const Tensor& z, nn::ForwardContext& ctx, nn::LayerCache* tape) const;

  // Evaluation-mode conveniences (deterministic).
  LatentBatch encode(const Tensor& x) const;
  Tensor decode(const Tensor& z) const;

  // Backward passes; parameter gradients accumulate.
  Tensor backward_decoder(const Tensor& grad_output, const nn::LayerCache& tape) const;
  Tensor backward_encoder(const Tensor& grad_mu, const Tensor& grad_logvar,
                          const nn::LayerCache& tape) const;

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  void zero_grad() const;
  bool all_finite() const;

  long step = 0;  // optimizer steps taken

  Archive to_archive() const;
  static ConditionedVae from_archive(const Archive& archive);

 private:
  void build();
  Shape4 latent_shape(int n) const { return {n, spec_.latent_channels, kLatentSide, kLatentSide}; }

  VaeSpec spec_;
  nn::Sequential encoder_;
  nn::Conv2d head_{"enc.head", 1, 2, 1, 1, 0};  // rebuilt in build()
  nn::Sequential decoder_;
};

void to_json(nlohmann::json& j, const VaeSpec& spec);
void from_json(const nlohmann::json& j, VaeSpec& spec);

}  // namespace clvae
