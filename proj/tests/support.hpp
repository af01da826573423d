#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "stencilseer/tensor.hpp"

namespace test_support {

using stencilseer::Kernel2x2;
using stencilseer::KernelLayer;
using stencilseer::Tensor3;

inline Tensor3 random_tensor(std::size_t r, std::size_t c, std::size_t ch,
                             std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor3 t(r, c, ch);
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline KernelLayer random_layer(std::size_t k, std::size_t cin,
                                std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  KernelLayer layer;
  for (std::size_t i = 0; i < k; ++i) {
    Kernel2x2 kern(cin);
    for (double& w : kern.weights()) w = u(rng);
    layer.push_back(kern);
  }
  return layer;
}

/// Brute-force valid cross-correlation of a single channel with an arbitrary
/// coefficient array.
inline Tensor3 correlate(const Tensor3& img, const Tensor3& st, std::size_t ch = 0) {
  Tensor3 out(img.rows() - st.rows() + 1, img.cols() - st.cols() + 1, 1);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < st.rows(); ++i)
        for (std::size_t j = 0; j < st.cols(); ++j)
          acc += st(i, j) * img(r + i, c + j, ch);
      out(r, c) = acc;
    }
  return out;
}

/// Central difference of f at x along every coordinate.
inline std::vector<double> numeric_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Max over coordinates of |a - b| / max(|a|, |b|, floor), with the floor
/// a fixed fraction of the largest entry so near-zero coordinates are
/// judged against the vector's scale.
inline double max_relative_error(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  double peak = 0.0;
  for (double v : a) peak = std::max(peak, std::abs(v));
  for (double v : b) peak = std::max(peak, std::abs(v));
  const double floor = std::max(1e-3 * peak, 1e-300);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / den);
  }
  return worst;
}

}  // namespace test_support
