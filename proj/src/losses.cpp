#include "clvae/losses.hpp"

#include <cmath>

#include "clvae/rng.hpp"

namespace clvae {

void LossWeights::validate() const {
  for (double w : {beta, w_distance, w_cluster, w_perceptual})
    if (!std::isfinite(w) || w < 0) throw ConfigError("loss weights must be finite and >= 0");
  if (beta <= 0) throw ConfigError("loss.beta must be > 0");
}

double reconstruction_loss(const Tensor& x, const Tensor& xhat) {
  require_same_shape(x, xhat, "reconstruction_loss");
  if (x.empty()) throw ShapeError("reconstruction_loss: empty input");
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = xhat[i] - x[i];
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

Tensor reconstruction_loss_grad(const Tensor& x, const Tensor& xhat) {
  require_same_shape(x, xhat, "reconstruction_loss_grad");
  Tensor g(x.shape());
  const double scale = 2.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = scale * (xhat[i] - x[i]);
  return g;
}

namespace {

// Prior value for element i of sample n, broadcasting a single mean.
inline double prior_at(const Tensor& prior, int n, std::size_t i) {
  return prior.n() == 1 ? prior[i] : prior[n * prior.shape().per_sample() + i];
}

void check_kl_inputs(const Tensor& mu, const Tensor& logvar, const Tensor& prior) {
  require_same_shape(mu, logvar, "kl_divergence");
  if (prior.shape().per_sample() != mu.shape().per_sample() ||
      (prior.n() != 1 && prior.n() != mu.n()))
    throw ShapeError("kl_divergence: prior shape " + prior.shape().str() +
                     " incompatible with " + mu.shape().str());
  if (mu.n() == 0) throw ShapeError("kl_divergence: empty batch");
  if (!mu.all_finite() || !logvar.all_finite() || !prior.all_finite())
    throw NumericalError("kl_divergence: non-finite input");
}

}  // namespace

double kl_divergence(const Tensor& mu, const Tensor& logvar, const Tensor& prior) {
  check_kl_inputs(mu, logvar, prior);
  const std::size_t per = mu.shape().per_sample();
  double total = 0;
  for (int n = 0; n < mu.n(); ++n)
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t k = n * per + i;
      const double d = mu[k] - prior_at(prior, n, i);
      total += 0.5 * (std::exp(logvar[k]) + d * d - 1.0 - logvar[k]);
    }
  return total / mu.n();
}

void kl_divergence_grad(const Tensor& mu, const Tensor& logvar, const Tensor& prior,
                        Tensor& grad_mu, Tensor& grad_logvar) {
  check_kl_inputs(mu, logvar, prior);
  grad_mu = Tensor(mu.shape());
  grad_logvar = Tensor(mu.shape());
  const std::size_t per = mu.shape().per_sample();
  const double inv_n = 1.0 / mu.n();
  for (int n = 0; n < mu.n(); ++n)
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t k = n * per + i;
      grad_mu[k] = (mu[k] - prior_at(prior, n, i)) * inv_n;
      grad_logvar[k] = 0.5 * (std::exp(logvar[k]) - 1.0) * inv_n;
    }
}

double distance_loss(std::span<const double> mu1, std::span<const double> mu2) {
  if (mu1.size() != mu2.size()) throw ShapeError("distance_loss: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < mu1.size(); ++i) s += std::abs(mu1[i] - mu2[i]);
  return -s;
}

void distance_loss_grad(std::span<const double> mu1, std::span<const double> mu2,
                        std::span<double> grad_mu1, std::span<double> grad_mu2) {
  if (mu1.size() != mu2.size() || grad_mu1.size() != mu1.size() || grad_mu2.size() != mu1.size())
    throw ShapeError("distance_loss_grad: shape mismatch");
  for (std::size_t i = 0; i < mu1.size(); ++i) {
    const double d = mu1[i] - mu2[i];
    const double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
    grad_mu1[i] = -s;
    grad_mu2[i] = s;
  }
}

double cluster_loss(const Tensor& z, const Tensor& means) {
  require_same_shape(z, means, "cluster_loss");
  if (z.n() == 0) throw ShapeError("cluster_loss: empty batch");
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = means[i] - z[i];
    s += d * d;
  }
  return s / z.n();
}

Tensor cluster_loss_grad(const Tensor& z, const Tensor& means) {
  require_same_shape(z, means, "cluster_loss_grad");
  if (z.n() == 0) throw ShapeError("cluster_loss: empty batch");
  Tensor g(z.shape());
  const double scale = 2.0 / z.n();
  for (std::size_t i = 0; i < z.size(); ++i) g[i] = scale * (z[i] - means[i]);
  return g;
}

// ------------------------------------------------------------------ perceptual

PerceptualBackbone::PerceptualBackbone(std::uint64_t seed, std::vector<int> widths)
    : seed_(seed) {
  Rng rng(derive_seed(seed, 0xbac4b0e));
  int in_c = 3;
  for (std::size_t s = 0; s < widths.size(); ++s) {
    nn::Sequential stage;
    auto& conv = stage.add(
        nn::Conv2d("backbone.stage" + std::to_string(s), in_c, widths[s], 3, 2, 1));
    conv.init_uniform(rng, std::sqrt(2.0 / (1.0 + 0.2 * 0.2)));
    for (double& b : conv.bias().value) b = rng.uniform(-0.1, 0.1);
    conv.set_frozen(true);
    stage.add(nn::LeakyRelu(0.2));
    stages_.push_back(std::move(stage));
    in_c = widths[s];
  }
}

void PerceptualBackbone::require_rgb(const Tensor& t) const {
  if (t.c() != 3)
    throw ShapeError("perceptual backbone accepts exactly 3 channels, got " + t.shape().str());
}

std::vector<Tensor> PerceptualBackbone::features(const Tensor& rgb,
                                                 std::vector<nn::LayerCache>* tapes) const {
  require_rgb(rgb);
  nn::ForwardContext ctx;
  if (tapes) tapes->assign(stages_.size(), nn::LayerCache{});
  std::vector<Tensor> taps;
  Tensor h = rgb;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    h = stages_[s].forward(h, ctx, tapes ? &(*tapes)[s] : nullptr);
    taps.push_back(h);
  }
  return taps;
}

Tensor PerceptualBackbone::pooled_features(const Tensor& rgb) const {
  const Tensor last = features(rgb, nullptr).back();
  Tensor out(last.n(), last.c(), 1, 1);
  const double inv = 1.0 / static_cast<double>(last.shape().plane());
  for (int n = 0; n < last.n(); ++n)
    for (int c = 0; c < last.c(); ++c) {
      double s = 0;
      for (int y = 0; y < last.h(); ++y)
        for (int x = 0; x < last.w(); ++x) s += last.at(n, c, y, x);
      out.at(n, c, 0, 0) = s * inv;
    }
  return out;
}

double PerceptualBackbone::loss(const Tensor& x, const Tensor& xhat) const {
  require_same_shape(x, xhat, "perceptual_loss");
  const auto fx = features(x, nullptr);
  const auto fy = features(xhat, nullptr);
  double total = 0;
  for (std::size_t t = 0; t < fx.size(); ++t) total += reconstruction_loss(fx[t], fy[t]);
  return total;
}

Tensor PerceptualBackbone::loss_grad(const Tensor& x, const Tensor& xhat) const {
  require_same_shape(x, xhat, "perceptual_loss_grad");
  const auto fx = features(x, nullptr);
  std::vector<nn::LayerCache> tapes;
  const auto fy = features(xhat, &tapes);
  Tensor g;
  for (std::size_t t = stages_.size(); t-- > 0;) {
    Tensor tap_grad = reconstruction_loss_grad(fx[t], fy[t]);
    if (!g.empty()) add_inplace(tap_grad, g);
    g = stages_[t].backward(tap_grad, tapes[t]);
  }
  return g;
}

double perceptual_loss(const PerceptualBackbone& backbone, const Tensor& x_rgb,
                       const Tensor& xhat_rgb) {
  return backbone.loss(x_rgb, xhat_rgb);
}

// ------------------------------------------------------------------ composite

LossBreakdown total_loss(const LossBreakdown& c, const LossWeights& w) {
  for (double v : {c.recon, c.kl, c.distance, c.cluster, c.perceptual})
    if (!std::isfinite(v)) throw NumericalError("non-finite loss component");
  LossBreakdown out = c;
  out.total = c.recon + w.beta * c.kl + w.w_distance * c.distance + w.w_cluster * c.cluster +
              w.w_perceptual * c.perceptual;
  return out;
}

ObjectiveResult evaluate_objective(const ObjectiveInputs& in, const LossWeights& weights,
                                   const ObjectiveSwitches& sw,
                                   const PerceptualBackbone* backbone) {
  const Tensor& x = *in.x;
  const Tensor& xhat = *in.xhat;
  const Tensor& mu = *in.mu;
  const Tensor& logvar = *in.logvar;
  const int n = mu.n();
  if (in.labels->size() != static_cast<std::size_t>(n))
    throw ShapeError("evaluate_objective: label count does not match batch");

  ObjectiveResult r;
  LossBreakdown c;

  c.recon = reconstruction_loss(x, xhat);
  r.grad_xhat = reconstruction_loss_grad(x, xhat);
  if (sw.recon_sum) {
    const auto per = static_cast<double>(x.shape().per_sample());
    c.recon *= per;
    for (auto& g : r.grad_xhat.vec()) g *= per;
  }

  c.kl = kl_divergence(mu, logvar, *in.prior);
  kl_divergence_grad(mu, logvar, *in.prior, r.grad_mu, r.grad_logvar);
  for (std::size_t i = 0; i < r.grad_mu.size(); ++i) {
    r.grad_mu[i] *= weights.beta;
    r.grad_logvar[i] *= weights.beta;
  }

  if (sw.perceptual) {
    if (!backbone) throw ConfigError("perceptual term enabled without a backbone");
    const Tensor x_rgb = x.channels(0, 3);
    const Tensor y_rgb = xhat.channels(0, 3);
    c.perceptual = backbone->loss(x_rgb, y_rgb);
    const Tensor g = backbone->loss_grad(x_rgb, y_rgb);
    const std::size_t plane = x.shape().plane();
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < 3; ++ch)
        for (std::size_t p = 0; p < plane; ++p)
          r.grad_xhat[(static_cast<std::size_t>(b) * x.c() + ch) * plane + p] +=
              weights.w_perceptual * g[(static_cast<std::size_t>(b) * 3 + ch) * plane + p];
  }

  if (sw.distance) {
    const std::size_t per = mu.shape().per_sample();
    std::vector<double> m1(per, 0.0), m2(per, 0.0);
    int n1 = 0, n2 = 0;
    for (int b = 0; b < n; ++b) {
      auto& dst = (*in.labels)[b] == Label::Normal ? m1 : m2;
      ((*in.labels)[b] == Label::Normal ? n1 : n2)++;
      const auto src = mu.sample(b);
      for (std::size_t i = 0; i < per; ++i) dst[i] += src[i];
    }
    if (n1 > 0 && n2 > 0) {
      for (std::size_t i = 0; i < per; ++i) {
        m1[i] /= n1;
        m2[i] /= n2;
      }
      const double d = distance_loss(m1, m2);
      if (-d >= sw.distance_radius) {
        c.distance = -sw.distance_radius;  // capped: no gradient beyond the radius
      } else {
        c.distance = d;
        std::vector<double> g1(per), g2(per);
        distance_loss_grad(m1, m2, g1, g2);
        for (int b = 0; b < n; ++b) {
          const bool normal = (*in.labels)[b] == Label::Normal;
          const auto& g = normal ? g1 : g2;
          const double scale = weights.w_distance / (normal ? n1 : n2);
          auto dst = r.grad_mu.sample(b);
          for (std::size_t i = 0; i < per; ++i) dst[i] += scale * g[i];
        }
      }
    }
  }

  if (sw.cluster) {
    if (!in.cluster_means) throw ConfigError("cluster term enabled without assigned centroids");
    c.cluster = cluster_loss(mu, *in.cluster_means);
    const Tensor g = cluster_loss_grad(mu, *in.cluster_means);
    for (std::size_t i = 0; i < g.size(); ++i) r.grad_mu[i] += weights.w_cluster * g[i];
  }

  r.breakdown = total_loss(c, weights);
  return r;
}

}  // namespace clvae
