#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "clvae/errors.hpp"

namespace clvae {

// Cache-line aligned storage. Vectorized reductions peel a head that depends
// on the address, so a fixed alignment keeps results bitwise reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kAlign}); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using DoubleVec = std::vector<double, AlignedAllocator<double>>;

struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t per_sample() const { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense NCHW tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 shape, double fill = 0.0)
      : shape_(shape), data_(shape.size(), fill) {}
  Tensor(int n, int c, int h, int w, double fill = 0.0)
      : Tensor(Shape4{n, c, h, w}, fill) {}

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  DoubleVec& vec() { return data_; }
  const DoubleVec& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  double at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  std::span<double> sample(int n) {
    return {data_.data() + n * shape_.per_sample(), shape_.per_sample()};
  }
  std::span<const double> sample(int n) const {
    return {data_.data() + n * shape_.per_sample(), shape_.per_sample()};
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Select channels [first, first + count) from every sample.
  Tensor channels(int first, int count) const;
  // Copy samples [first, first + count).
  Tensor slice(int first, int count) const;

 private:
  Shape4 shape_;
  DoubleVec data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
}

// a += b
void add_inplace(Tensor& a, const Tensor& b);

}  // namespace clvae
