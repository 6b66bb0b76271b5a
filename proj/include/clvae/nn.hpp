#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "clvae/rng.hpp"
#include "clvae/tensor.hpp"

namespace clvae::nn {

struct Parameter {
  std::string name;
  std::vector<int> dims;
  DoubleVec value;
  mutable DoubleVec grad;  // accumulated by const backward passes

  std::size_t size() const { return value.size(); }
  void zero_grad() const { std::fill(grad.begin(), grad.end(), 0.0); }
};

enum class Mode { Train, Eval };

struct ForwardContext {
  Mode mode = Mode::Eval;
  Rng* rng = nullptr;  // required in Train mode by stochastic layers
};

// What a layer keeps from its forward pass for the backward pass.
struct LayerCache {
  Shape4 in_shape;
  Tensor input;
  Tensor aux;
  std::vector<LayerCache> children;
};

// Layers are immutable during forward passes; parameter gradients accumulate
// during backward. A null cache means "inference only".
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, ForwardContext& ctx, LayerCache* cache) const = 0;
  virtual Tensor backward(const Tensor& grad_out, const LayerCache& cache) const = 0;
  virtual void collect(std::vector<Parameter*>& /*out*/) {}
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad);

  // Fan-in scaled uniform initialization: U(-bound, bound), bound = gain * sqrt(3 / fan_in).
  void init_uniform(Rng& rng, double gain);
  // Frozen convolutions skip parameter gradients (input gradients still flow).
  void set_frozen(bool frozen) { frozen_ = frozen; }

  Tensor forward(const Tensor& x, ForwardContext& ctx, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) const override;
  void collect(std::vector<Parameter*>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }

 private:
  int out_size(int in_size) const { return (in_size + 2 * pad_ - k_) / stride_ + 1; }

  int in_, out_, k_, stride_, pad_;
  bool frozen_ = false;
  Parameter weight_;  // out x (in * k * k)
  Parameter bias_;    // out
};

// Randomized leaky ReLU: negative slope drawn per element from U(lower, upper)
// in training, fixed at the interval midpoint in evaluation.
class RRelu : public Layer {
 public:
  RRelu(double lower, double upper) : lower_(lower), upper_(upper) {}
  Tensor forward(const Tensor& x, ForwardContext& ctx, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<RRelu>(*this); }

  double eval_slope() const { return 0.5 * (lower_ + upper_); }

 private:
  double lower_, upper_;
};

class LeakyRelu : public Layer {
 public:
  explicit LeakyRelu(double slope) : slope_(slope) {}
  Tensor forward(const Tensor& x, ForwardContext& ctx, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<LeakyRelu>(*this); }

 private:
  double slope_;
};

class Sigmoid : public Layer {
 public:
  Tensor forward(const Tensor& x, ForwardContext& ctx, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(*this); }
};

class UpsampleNearest2x : public Layer {
 public:
  Tensor forward(const Tensor& x, ForwardContext& ctx, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) const override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<UpsampleNearest2x>(*this);
  }
};

class AvgPool2x : public Layer {
 public:
  Tensor forward(const Tensor& x, ForwardContext& ctx, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool2x>(*this); }
};

// x + conv(rrelu(conv(x))), channel count preserved.
class ResBlock : public Layer {
 public:
  ResBlock(const std::string& name, int channels, double lower, double upper);
  void init(Rng& rng, double gain);

  Tensor forward(const Tensor& x, ForwardContext& ctx, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) const override;
  void collect(std::vector<Parameter*>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ResBlock>(*this); }

 private:
  Conv2d conv1_;
  RRelu act_;
  Conv2d conv2_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L>
  L& add(L layer) {
    auto p = std::make_unique<L>(std::move(layer));
    L& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }

  Tensor forward(const Tensor& x, ForwardContext& ctx, LayerCache* cache) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache) const override;
  void collect(std::vector<Parameter*>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sequential>(*this); }

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace clvae::nn
