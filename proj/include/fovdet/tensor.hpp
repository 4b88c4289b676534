#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "fovdet/errors.hpp"

namespace fovdet {

// Dense row-major tensor of doubles. Small helper type, not a math library:
// the heavy lifting lives in kernels.hpp.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0);
  }
  Tensor(std::vector<int> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
      throw InternalError("tensor: data size does not match shape");
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // 2-d accessors; bounds are the caller's problem.
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * dim(1) + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * dim(1) + c]; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

}  // namespace fovdet
