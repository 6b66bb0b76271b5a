#include "clvae/nn.hpp"

#include <Eigen/Core>
#include <cmath>

namespace clvae {

std::string Shape4::str() const {
  return "[" + std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
         std::to_string(w) + "]";
}

Tensor Tensor::channels(int first, int count) const {
  if (first < 0 || count < 0 || first + count > shape_.c)
    throw ShapeError("channel range out of bounds for " + shape_.str());
  Tensor out(shape_.n, count, shape_.h, shape_.w);
  const std::size_t plane = shape_.plane();
  for (int n = 0; n < shape_.n; ++n)
    std::copy_n(data_.data() + (static_cast<std::size_t>(n) * shape_.c + first) * plane,
                count * plane, out.data() + static_cast<std::size_t>(n) * count * plane);
  return out;
}

Tensor Tensor::slice(int first, int count) const {
  if (first < 0 || count < 0 || first + count > shape_.n)
    throw ShapeError("sample range out of bounds for " + shape_.str());
  Tensor out(count, shape_.c, shape_.h, shape_.w);
  std::copy_n(data_.data() + first * shape_.per_sample(), count * shape_.per_sample(),
              out.data());
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace clvae

namespace clvae::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
  int n, c, h, w, k, stride, pad, oh, ow;
  std::size_t rows() const { return static_cast<std::size_t>(c) * k * k; }
  std::size_t cols() const { return static_cast<std::size_t>(n) * oh * ow; }
};

// Single sample: cols[(ci*k + ky)*k + kx][oy*ow + ox] = x[ci][oy*s - p + ky][ox*s - p + kx]
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t opl = static_cast<std::size_t>(g.oh) * g.ow;
  for (int ci = 0; ci < g.c; ++ci) {
    const double* src = x + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        double* dst = cols + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * opl;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* drow = dst + static_cast<std::size_t>(oy) * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(drow, g.ow, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            drow[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : 0.0;
          }
        }
      }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t opl = static_cast<std::size_t>(g.oh) * g.ow;
  for (int ci = 0; ci < g.c; ++ci) {
    double* dst = dx + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const double* src = cols + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * opl;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          double* drow = dst + static_cast<std::size_t>(iy) * g.w;
          const double* srow = src + static_cast<std::size_t>(oy) * g.ow;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
          }
        }
      }
  }
}

Parameter make_param(std::string name, std::vector<int> dims) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return Parameter{std::move(name), std::move(dims), DoubleVec(n, 0.0),
                   DoubleVec(n, 0.0)};
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
               int pad)
    : in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      weight_(make_param(name + ".weight", {out_channels, in_channels, kernel, kernel})),
      bias_(make_param(name + ".bias", {out_channels})) {}

void Conv2d::init_uniform(Rng& rng, double gain) {
  const double fan_in = static_cast<double>(in_) * k_ * k_;
  const double bound = gain * std::sqrt(3.0 / fan_in);
  for (double& v : weight_.value) v = rng.uniform(-bound, bound);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

Tensor Conv2d::forward(const Tensor& x, ForwardContext&, LayerCache* cache) const {
  if (x.c() != in_)
    throw ShapeError("conv " + weight_.name + ": expected " + std::to_string(in_) +
                     " input channels, got " + x.shape().str());
  const ConvGeometry g{1, x.c(), x.h(), x.w(), k_, stride_, pad_, out_size(x.h()),
                       out_size(x.w())};
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto opl = static_cast<Eigen::Index>(g.cols());
  DoubleVec cols(g.rows() * g.cols());
  const ConstMapMat W(weight_.value.data(), out_, rows);
  const ConstMapMat C(cols.data(), rows, opl);
  const Eigen::Map<const Eigen::VectorXd> b(bias_.value.data(), out_);
  Tensor out(x.n(), out_, g.oh, g.ow);
  for (int n = 0; n < x.n(); ++n) {
    im2col(x.data() + n * x.shape().per_sample(), g, cols.data());
    MapMat y(out.data() + n * out.shape().per_sample(), out_, opl);
    y.noalias() = W * C;
    y.colwise() += b;
  }
  if (cache) {
    cache->in_shape = x.shape();
    cache->input = x;
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out, const LayerCache& cache) const {
  const Shape4& in = cache.in_shape;
  const ConvGeometry g{1, in.c, in.h, in.w, k_, stride_, pad_, out_size(in.h), out_size(in.w)};
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto opl = static_cast<Eigen::Index>(g.cols());
  DoubleVec cols(g.rows() * g.cols());
  RowMat dcols(rows, opl);
  const ConstMapMat W(weight_.value.data(), out_, rows);
  const ConstMapMat C(cols.data(), rows, opl);
  MapMat dw(weight_.grad.data(), out_, rows);
  Eigen::Map<Eigen::VectorXd> db(bias_.grad.data(), out_);
  Tensor dx(in);
  for (int n = 0; n < in.n; ++n) {
    const ConstMapMat dy(grad_out.data() + n * grad_out.shape().per_sample(), out_, opl);
    if (!frozen_) {
      im2col(cache.input.data() + n * in.per_sample(), g, cols.data());
      dw.noalias() += dy * C.transpose();
      db += dy.rowwise().sum();
    }
    dcols.noalias() = W.transpose() * dy;
    col2im(dcols.data(), g, dx.data() + n * in.per_sample());
  }
  return dx;
}

void Conv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------- activations

Tensor RRelu::forward(const Tensor& x, ForwardContext& ctx, LayerCache* cache) const {
  Tensor out(x.shape());
  if (ctx.mode == Mode::Train) {
    if (!ctx.rng) throw Error("RRelu: training mode requires a random generator");
    Tensor slopes(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = ctx.rng->uniform(lower_, upper_);
      slopes[i] = x[i] >= 0.0 ? 1.0 : a;
      out[i] = x[i] * slopes[i];
    }
    if (cache) cache->aux = std::move(slopes);
  } else {
    const double a = eval_slope();
    Tensor slopes;
    if (cache) slopes = Tensor(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = x[i] >= 0.0 ? 1.0 : a;
      out[i] = x[i] * s;
      if (cache) slopes[i] = s;
    }
    if (cache) cache->aux = std::move(slopes);
  }
  return out;
}

Tensor RRelu::backward(const Tensor& grad_out, const LayerCache& cache) const {
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_out[i] * cache.aux[i];
  return dx;
}

Tensor LeakyRelu::forward(const Tensor& x, ForwardContext&, LayerCache* cache) const {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= 0.0 ? x[i] : slope_ * x[i];
  if (cache) cache->input = x;
  return out;
}

Tensor LeakyRelu::backward(const Tensor& grad_out, const LayerCache& cache) const {
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i)
    dx[i] = cache.input[i] >= 0.0 ? grad_out[i] : slope_ * grad_out[i];
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x, ForwardContext&, LayerCache* cache) const {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
  if (cache) cache->aux = out;
  return out;
}

Tensor Sigmoid::backward(const Tensor& grad_out, const LayerCache& cache) const {
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double s = cache.aux[i];
    dx[i] = grad_out[i] * s * (1.0 - s);
  }
  return dx;
}

// ---------------------------------------------------------------- resampling

Tensor UpsampleNearest2x::forward(const Tensor& x, ForwardContext&, LayerCache* cache) const {
  Tensor out(x.n(), x.c(), 2 * x.h(), 2 * x.w());
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int y = 0; y < out.h(); ++y)
        for (int xx = 0; xx < out.w(); ++xx) out.at(n, c, y, xx) = x.at(n, c, y / 2, xx / 2);
  if (cache) cache->in_shape = x.shape();
  return out;
}

Tensor UpsampleNearest2x::backward(const Tensor& grad_out, const LayerCache& cache) const {
  Tensor dx(cache.in_shape);
  for (int n = 0; n < grad_out.n(); ++n)
    for (int c = 0; c < grad_out.c(); ++c)
      for (int y = 0; y < grad_out.h(); ++y)
        for (int xx = 0; xx < grad_out.w(); ++xx)
          dx.at(n, c, y / 2, xx / 2) += grad_out.at(n, c, y, xx);
  return dx;
}

Tensor AvgPool2x::forward(const Tensor& x, ForwardContext&, LayerCache* cache) const {
  if (x.h() % 2 || x.w() % 2) throw ShapeError("AvgPool2x needs even spatial dims");
  Tensor out(x.n(), x.c(), x.h() / 2, x.w() / 2);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int y = 0; y < out.h(); ++y)
        for (int xx = 0; xx < out.w(); ++xx)
          out.at(n, c, y, xx) = 0.25 * (x.at(n, c, 2 * y, 2 * xx) + x.at(n, c, 2 * y, 2 * xx + 1) +
                                        x.at(n, c, 2 * y + 1, 2 * xx) +
                                        x.at(n, c, 2 * y + 1, 2 * xx + 1));
  if (cache) cache->in_shape = x.shape();
  return out;
}

Tensor AvgPool2x::backward(const Tensor& grad_out, const LayerCache& cache) const {
  Tensor dx(cache.in_shape);
  for (int n = 0; n < dx.n(); ++n)
    for (int c = 0; c < dx.c(); ++c)
      for (int y = 0; y < dx.h(); ++y)
        for (int xx = 0; xx < dx.w(); ++xx)
          dx.at(n, c, y, xx) = 0.25 * grad_out.at(n, c, y / 2, xx / 2);
  return dx;
}

// ---------------------------------------------------------------- ResBlock

ResBlock::ResBlock(const std::string& name, int channels, double lower, double upper)
    : conv1_(name + ".conv1", channels, channels, 3, 1, 1),
      act_(lower, upper),
      conv2_(name + ".conv2", channels, channels, 3, 1, 1) {}

void ResBlock::init(Rng& rng, double gain) {
  conv1_.init_uniform(rng, gain);
  // The residual branch starts small so each block begins close to identity.
  conv2_.init_uniform(rng, 0.5 * gain);
}

Tensor ResBlock::forward(const Tensor& x, ForwardContext& ctx, LayerCache* cache) const {
  if (cache) cache->children.assign(3, LayerCache{});
  Tensor h = conv1_.forward(x, ctx, cache ? &cache->children[0] : nullptr);
  h = act_.forward(h, ctx, cache ? &cache->children[1] : nullptr);
  h = conv2_.forward(h, ctx, cache ? &cache->children[2] : nullptr);
  add_inplace(h, x);
  return h;
}

Tensor ResBlock::backward(const Tensor& grad_out, const LayerCache& cache) const {
  Tensor g = conv2_.backward(grad_out, cache.children[2]);
  g = act_.backward(g, cache.children[1]);
  g = conv1_.backward(g, cache.children[0]);
  add_inplace(g, grad_out);
  return g;
}

void ResBlock::collect(std::vector<Parameter*>& out) {
  conv1_.collect(out);
  conv2_.collect(out);
}

// ---------------------------------------------------------------- Sequential

Sequential::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential tmp(other);
    layers_ = std::move(tmp.layers_);
  }
  return *this;
}

Tensor Sequential::forward(const Tensor& x, ForwardContext& ctx, LayerCache* cache) const {
  if (cache) cache->children.assign(layers_.size(), LayerCache{});
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    h = layers_[i]->forward(h, ctx, cache ? &cache->children[i] : nullptr);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out, const LayerCache& cache) const {
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, cache.children[i]);
  return g;
}

void Sequential::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers_) l->collect(out);
}

}  // namespace clvae::nn
