#include "clvae/vae.hpp"

#include <bit>
#include <cmath>

namespace clvae {

using nlohmann::json;

int VaeSpec::stages() const {
  int s = 0;
  for (int size = image_size; size > kLatentSide; size /= 2) ++s;
  return s;
}

int VaeSpec::width(int stage) const {
  return widths[std::min<std::size_t>(static_cast<std::size_t>(stage), widths.size() - 1)];
}

void VaeSpec::validate() const {
  if (input_channels != 3 && input_channels != 4)
    throw ConfigError("vae.input_channels must be 3 or 4");
  if (latent_channels < 1) throw ConfigError("vae.latent_channels must be positive");
  if (image_size < 2 * kLatentSide || image_size % kLatentSide != 0 ||
      !std::has_single_bit(static_cast<unsigned>(image_size / kLatentSide)))
    throw ConfigError("vae.image_size must be 4 * 2^k with k >= 1");
  if (widths.empty()) throw ConfigError("vae.widths must not be empty");
  for (int w : widths)
    if (w < 1) throw ConfigError("vae.widths entries must be positive");
  if (!(rrelu_lower >= 0 && rrelu_lower <= rrelu_upper && rrelu_upper < 1))
    throw ConfigError("vae RRelu bounds must satisfy 0 <= lower <= upper < 1");
  if (extra_pool && stages() < 3) throw ConfigError("vae.extra_pool needs at least 3 stages");
}

void to_json(json& j, const VaeSpec& s) {
  j = json{{"input_channels", s.input_channels}, {"latent_channels", s.latent_channels},
           {"image_size", s.image_size},         {"widths", s.widths},
           {"rrelu_lower", s.rrelu_lower},       {"rrelu_upper", s.rrelu_upper},
           {"extra_pool", s.extra_pool},         {"seed", s.seed}};
}

void from_json(const json& j, VaeSpec& s) {
  s.input_channels = j.at("input_channels").get<int>();
  s.latent_channels = j.at("latent_channels").get<int>();
  s.image_size = j.at("image_size").get<int>();
  s.widths = j.at("widths").get<std::vector<int>>();
  s.rrelu_lower = j.at("rrelu_lower").get<double>();
  s.rrelu_upper = j.at("rrelu_upper").get<double>();
  s.extra_pool = j.at("extra_pool").get<bool>();
  s.seed = j.at("seed").get<std::uint64_t>();
}

// ------------------------------------------------------------------ priors

PriorSet PriorSet::symmetric(int latent_channels, double delta) {
  PriorSet p{Tensor(1, latent_channels, kLatentSide, kLatentSide),
             Tensor(1, latent_channels, kLatentSide, kLatentSide)};
  for (int y = 0; y < kLatentSide; ++y)
    for (int x = 0; x < kLatentSide; ++x) {
      p.m_normal.at(0, 0, y, x) = -delta;
      p.m_anomaly.at(0, 0, y, x) = delta;
    }
  return p;
}

void PriorSet::validate() const {
  require_same_shape(m_normal, m_anomaly, "PriorSet");
  if (!m_normal.all_finite() || !m_anomaly.all_finite())
    throw NumericalError("prior means must be finite");
  if (m_normal.vec() == m_anomaly.vec()) throw ConfigError("prior means must differ");
}

const Tensor& prior_mean_for(Label label, const PriorSet& priors) {
  return label == Label::Normal ? priors.m_normal : priors.m_anomaly;
}

Tensor prior_means_for(const std::vector<Label>& labels, const PriorSet& priors) {
  const Shape4 s = priors.m_normal.shape();
  Tensor out(static_cast<int>(labels.size()), s.c, s.h, s.w);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto src = prior_mean_for(labels[i], priors).sample(0);
    std::copy(src.begin(), src.end(), out.sample(static_cast<int>(i)).begin());
  }
  return out;
}

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& eps) {
  require_same_shape(mu, logvar, "reparameterize");
  require_same_shape(mu, eps, "reparameterize");
  Tensor z(mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + std::exp(0.5 * logvar[i]) * eps[i];
  return z;
}

// ------------------------------------------------------------------ model

ConditionedVae::ConditionedVae(VaeSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  build();
}

void ConditionedVae::build() {
  const double lo = spec_.rrelu_lower, hi = spec_.rrelu_upper;
  const double mid = 0.5 * (lo + hi);
  const double act_gain = std::sqrt(2.0 / (1.0 + mid * mid));
  Rng rng(derive_seed(spec_.seed, 0x7ae));
  const int S = spec_.stages();

  encoder_ = nn::Sequential();
  int in_c = spec_.input_channels;
  for (int s = 0; s < S; ++s) {
    const std::string name = "enc.stage" + std::to_string(s);
    const bool pooled = spec_.extra_pool && s == 2;
    auto& down = encoder_.add(nn::Conv2d(name + ".down", in_c, spec_.width(s), 3, pooled ? 1 : 2, 1));
    down.init_uniform(rng, act_gain);
    if (pooled) encoder_.add(nn::AvgPool2x());
    encoder_.add(nn::RRelu(lo, hi));
    encoder_.add(nn::ResBlock(name + ".res", spec_.width(s), lo, hi)).init(rng, act_gain);
    in_c = spec_.width(s);
  }
  head_ = nn::Conv2d("enc.head", in_c, 2 * spec_.latent_channels, 1, 1, 0);
  head_.init_uniform(rng, 1.0);

  decoder_ = nn::Sequential();
  decoder_.add(nn::Conv2d("dec.input", spec_.latent_channels, spec_.width(S - 1), 3, 1, 1))
      .init_uniform(rng, act_gain);
  decoder_.add(nn::RRelu(lo, hi));
  for (int s = S - 1; s >= 0; --s) {
    const std::string name = "dec.stage" + std::to_string(s);
    const int out_c = spec_.width(std::max(s - 1, 0));
    decoder_.add(nn::ResBlock(name + ".res", spec_.width(s), lo, hi)).init(rng, act_gain);
    decoder_.add(nn::UpsampleNearest2x());
    decoder_.add(nn::Conv2d(name + ".up", spec_.width(s), out_c, 3, 1, 1))
        .init_uniform(rng, act_gain);
    decoder_.add(nn::RRelu(lo, hi));
  }
  decoder_.add(nn::Conv2d("dec.output", spec_.width(0), spec_.input_channels, 3, 1, 1))
      .init_uniform(rng, 1.0);
  decoder_.add(nn::Sigmoid());
}

LatentBatch ConditionedVae::encode(const Tensor& x, nn::ForwardContext& ctx,
                                   nn::LayerCache* tape) const {
  if (x.c() != spec_.input_channels)
    throw ShapeError("encode: expected " + std::to_string(spec_.input_channels) +
                     " channels, got batch " + x.shape().str());
  if (x.h() != spec_.image_size || x.w() != spec_.image_size)
    throw ShapeError("encode: expected " + std::to_string(spec_.image_size) +
                     " pixel square images, got batch " + x.shape().str());
  if (tape) tape->children.assign(2, nn::LayerCache{});
  const Tensor h = encoder_.forward(x, ctx, tape ? &tape->children[0] : nullptr);
  const Tensor out = head_.forward(h, ctx, tape ? &tape->children[1] : nullptr);
  const int z = spec_.latent_channels;
  return LatentBatch{out.channels(0, z), out.channels(z, z)};
}

Tensor ConditionedVae::decode(const Tensor& z, nn::ForwardContext& ctx,
                              nn::LayerCache* tape) const {
  if (z.shape() != latent_shape(z.n()))
    throw ShapeError("decode: expected latent batch n x " +
                     std::to_string(spec_.latent_channels) + " x 4 x 4, got " + z.shape().str());
  return decoder_.forward(z, ctx, tape);
}

LatentBatch ConditionedVae::encode(const Tensor& x) const {
  nn::ForwardContext ctx;
  return encode(x, ctx, nullptr);
}

Tensor ConditionedVae::decode(const Tensor& z) const {
  nn::ForwardContext ctx;
  return decode(z, ctx, nullptr);
}

Tensor ConditionedVae::backward_decoder(const Tensor& grad_output,
                                        const nn::LayerCache& tape) const {
  return decoder_.backward(grad_output, tape);
}

Tensor ConditionedVae::backward_encoder(const Tensor& grad_mu, const Tensor& grad_logvar,
                                        const nn::LayerCache& tape) const {
  require_same_shape(grad_mu, grad_logvar, "backward_encoder");
  const int n = grad_mu.n(), z = spec_.latent_channels;
  Tensor g(n, 2 * z, kLatentSide, kLatentSide);
  const std::size_t block = static_cast<std::size_t>(z) * kLatentSide * kLatentSide;
  for (int i = 0; i < n; ++i) {
    std::copy_n(grad_mu.sample(i).data(), block, g.sample(i).data());
    std::copy_n(grad_logvar.sample(i).data(), block, g.sample(i).data() + block);
  }
  const Tensor gh = head_.backward(g, tape.children[1]);
  return encoder_.backward(gh, tape.children[0]);
}

std::vector<nn::Parameter*> ConditionedVae::parameters() {
  std::vector<nn::Parameter*> out;
  encoder_.collect(out);
  head_.collect(out);
  decoder_.collect(out);
  return out;
}

std::vector<const nn::Parameter*> ConditionedVae::parameters() const {
  auto params = const_cast<ConditionedVae*>(this)->parameters();
  return {params.begin(), params.end()};
}

void ConditionedVae::zero_grad() const {
  for (const auto* p : parameters()) p->zero_grad();
}

bool ConditionedVae::all_finite() const {
  for (const auto* p : parameters())
    for (double v : p->value)
      if (!std::isfinite(v)) return false;
  return true;
}

Archive ConditionedVae::to_archive() const {
  Archive a;
  a.metadata["vae_spec"] = spec_;
  a.metadata["step"] = step;
  for (const auto* p : parameters()) {
    NamedArray arr{p->name, {}, {p->value.begin(), p->value.end()}};
    for (int d : p->dims) arr.dims.push_back(d);
    a.arrays.push_back(std::move(arr));
  }
  return a;
}

ConditionedVae ConditionedVae::from_archive(const Archive& archive) {
  if (!archive.metadata.contains("vae_spec")) throw DataError("archive holds no model spec");
  ConditionedVae model(archive.metadata.at("vae_spec").get<VaeSpec>());
  model.step = archive.metadata.value("step", 0L);
  for (auto* p : model.parameters()) {
    const NamedArray& arr = archive.get(p->name);
    if (arr.data.size() != p->value.size())
      throw DataError("archive array " + p->name + " has the wrong size");
    p->value.assign(arr.data.begin(), arr.data.end());
  }
  if (!model.all_finite()) throw NumericalError("archive contains non-finite weights");
  return model;
}

}  // namespace clvae
