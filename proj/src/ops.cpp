#include "stencilseer/ops.hpp"

#include <cmath>
#include <string>

#include "stencilseer/errors.hpp"

namespace stencilseer::ops {
namespace {

void check_kernels(const Tensor3& input, std::span<const Kernel2x2> kernels,
                   const char* op) {
  if (kernels.empty()) {
    throw ShapeError(std::string(op) + ": empty kernel list");
  }
  for (const auto& k : kernels) {
    if (k.in_channels() != input.channels()) {
      throw ShapeError(std::string(op) + ": kernel expects " +
                       std::to_string(k.in_channels()) +
                       " channels, input has " +
                       std::to_string(input.channels()));
    }
  }
}

}  // namespace

Tensor3 conv2d_valid(const Tensor3& input, std::span<const Kernel2x2> kernels) {
  if (input.rows() < 2 || input.cols() < 2) {
    throw ShapeError("conv2d_valid: input must be at least 2x2");
  }
  check_kernels(input, kernels, "conv2d_valid");
  const std::size_t rows = input.rows() - 1;
  const std::size_t cols = input.cols() - 1;
  const std::size_t cin = input.channels();
  const std::size_t kout = kernels.size();
  Tensor3 out(rows, cols, kout);
  const auto in = input.data();
  auto o = out.data();
  for (std::size_t k = 0; k < kout; ++k) {
    const auto w = kernels[k].weights();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 2; ++i) {
          for (std::size_t j = 0; j < 2; ++j) {
            const double* px = &in[((r + i) * input.cols() + c + j) * cin];
            const double* pw = &w[(i * 2 + j) * cin];
            for (std::size_t ch = 0; ch < cin; ++ch) acc += pw[ch] * px[ch];
          }
        }
        o[(r * cols + c) * kout + k] = acc;
      }
    }
  }
  return out;
}

Tensor3 transpose_conv2d(const Tensor3& input,
                         std::span<const Kernel2x2> kernels) {
  if (input.empty()) throw ShapeError("transpose_conv2d: empty input");
  check_kernels(input, kernels, "transpose_conv2d");
  const std::size_t cin = input.channels();
  const std::size_t kout = kernels.size();
  Tensor3 out(input.rows() + 1, input.cols() + 1, kout);
  for (std::size_t k = 0; k < kout; ++k) {
    const auto& ker = kernels[k];
    for (std::size_t r = 0; r < input.rows(); ++r) {
      for (std::size_t c = 0; c < input.cols(); ++c) {
        for (std::size_t i = 0; i < 2; ++i) {
          for (std::size_t j = 0; j < 2; ++j) {
            double acc = 0.0;
            for (std::size_t ch = 0; ch < cin; ++ch)
              acc += ker(i, j, ch) * input(r, c, ch);
            out(r + i, c + j, k) += acc;
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_valid_backward(const Tensor3& input,
                                std::span<const Kernel2x2> kernels,
                                const Tensor3& upstream) {
  const std::size_t cin = input.channels();
  const std::size_t kout = kernels.size();
  if (upstream.rows() + 1 != input.rows() ||
      upstream.cols() + 1 != input.cols() || upstream.channels() != kout) {
    throw ShapeError("conv2d_valid_backward: upstream shape mismatch");
  }
  ConvGrads g{Tensor3(input.rows(), input.cols(), cin),
              KernelLayer(kout, Kernel2x2(cin))};
  const auto in = input.data();
  auto gi = g.input.data();
  const auto up = upstream.data();
  for (std::size_t k = 0; k < kout; ++k) {
    const auto w = kernels[k].weights();
    auto gw = g.kernels[k].weights();
    for (std::size_t r = 0; r < upstream.rows(); ++r) {
      for (std::size_t c = 0; c < upstream.cols(); ++c) {
        const double u = up[(r * upstream.cols() + c) * kout + k];
        if (u == 0.0) continue;
        for (std::size_t i = 0; i < 2; ++i) {
          for (std::size_t j = 0; j < 2; ++j) {
            const std::size_t base = ((r + i) * input.cols() + c + j) * cin;
            const std::size_t wb = (i * 2 + j) * cin;
            for (std::size_t ch = 0; ch < cin; ++ch) {
              gw[wb + ch] += u * in[base + ch];
              gi[base + ch] += u * w[wb + ch];
            }
          }
        }
      }
    }
  }
  return g;
}

ConvGrads transpose_conv2d_backward(const Tensor3& input,
                                    std::span<const Kernel2x2> kernels,
                                    const Tensor3& upstream) {
  const std::size_t cin = input.channels();
  const std::size_t kout = kernels.size();
  if (upstream.rows() != input.rows() + 1 ||
      upstream.cols() != input.cols() + 1 || upstream.channels() != kout) {
    throw ShapeError("transpose_conv2d_backward: upstream shape mismatch");
  }
  ConvGrads g{Tensor3(input.rows(), input.cols(), cin),
              KernelLayer(kout, Kernel2x2(cin))};
  for (std::size_t k = 0; k < kout; ++k) {
    const auto& ker = kernels[k];
    auto& gk = g.kernels[k];
    for (std::size_t r = 0; r < input.rows(); ++r) {
      for (std::size_t c = 0; c < input.cols(); ++c) {
        for (std::size_t i = 0; i < 2; ++i) {
          for (std::size_t j = 0; j < 2; ++j) {
            const double u = upstream(r + i, c + j, k);
            for (std::size_t ch = 0; ch < cin; ++ch) {
              gk(i, j, ch) += u * input(r, c, ch);
              g.input(r, c, ch) += u * ker(i, j, ch);
            }
          }
        }
      }
    }
  }
  return g;
}

std::size_t first_half_rows(std::size_t rows) { return (rows + 1) / 2; }

Tensor3 avg_pool_halves(const Tensor3& input) {
  const std::size_t rows = input.rows();
  if (rows < 2) throw ShapeError("avg_pool_halves: need at least 2 rows");
  const std::size_t split = first_half_rows(rows);
  Tensor3 out(2, input.cols(), input.channels());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t half = r < split ? 0 : 1;
    for (std::size_t c = 0; c < input.cols(); ++c)
      for (std::size_t ch = 0; ch < input.channels(); ++ch)
        out(half, c, ch) += input(r, c, ch);
  }
  const double inv0 = 1.0 / static_cast<double>(split);
  const double inv1 = 1.0 / static_cast<double>(rows - split);
  for (std::size_t c = 0; c < input.cols(); ++c) {
    for (std::size_t ch = 0; ch < input.channels(); ++ch) {
      out(0, c, ch) *= inv0;
      out(1, c, ch) *= inv1;
    }
  }
  return out;
}

Tensor3 avg_pool_halves_backward(std::size_t rows, const Tensor3& upstream) {
  if (rows < 2 || upstream.rows() != 2) {
    throw ShapeError("avg_pool_halves_backward: bad shapes");
  }
  const std::size_t split = first_half_rows(rows);
  const double inv0 = 1.0 / static_cast<double>(split);
  const double inv1 = 1.0 / static_cast<double>(rows - split);
  Tensor3 out(rows, upstream.cols(), upstream.channels());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t half = r < split ? 0 : 1;
    const double s = half == 0 ? inv0 : inv1;
    for (std::size_t c = 0; c < upstream.cols(); ++c)
      for (std::size_t ch = 0; ch < upstream.channels(); ++ch)
        out(r, c, ch) = s * upstream(half, c, ch);
  }
  return out;
}

Tensor3 replicate_halves(const Tensor3& pooled, std::size_t rows) {
  if (pooled.rows() != 2 || rows < 2) {
    throw ShapeError("replicate_halves: expects a 2-row input");
  }
  const std::size_t split = first_half_rows(rows);
  Tensor3 out(rows, pooled.cols(), pooled.channels());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t half = r < split ? 0 : 1;
    for (std::size_t c = 0; c < pooled.cols(); ++c)
      for (std::size_t ch = 0; ch < pooled.channels(); ++ch)
        out(r, c, ch) = pooled(half, c, ch);
  }
  return out;
}

Tensor3 replicate_halves_backward(const Tensor3& upstream) {
  const std::size_t rows = upstream.rows();
  if (rows < 2) throw ShapeError("replicate_halves_backward: bad shape");
  const std::size_t split = first_half_rows(rows);
  Tensor3 out(2, upstream.cols(), upstream.channels());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t half = r < split ? 0 : 1;
    for (std::size_t c = 0; c < upstream.cols(); ++c)
      for (std::size_t ch = 0; ch < upstream.channels(); ++ch)
        out(half, c, ch) += upstream(r, c, ch);
  }
  return out;
}

Tensor3 tanh_map(const Tensor3& input) {
  Tensor3 out = input;
  for (double& v : out.data()) v = std::tanh(v);
  return out;
}

Tensor3 channel_product(const Tensor3& a, const Tensor3& b) {
  if (!a.same_shape(b)) throw ShapeError("channel_product: shape mismatch");
  Tensor3 out = a;
  auto o = out.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return out;
}

Tensor3 concat_channels(const Tensor3& a, const Tensor3& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("concat_channels: spatial dims differ");
  }
  Tensor3 out(a.rows(), a.cols(), a.channels() + b.channels());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) {
      for (std::size_t ch = 0; ch < a.channels(); ++ch)
        out(r, c, ch) = a(r, c, ch);
      for (std::size_t ch = 0; ch < b.channels(); ++ch)
        out(r, c, a.channels() + ch) = b(r, c, ch);
    }
  }
  return out;
}

double mse(const Tensor3& pred, const Tensor3& target) {
  if (!pred.same_shape(target)) {
    throw ShapeError("mse: prediction and target shapes differ");
  }
  if (pred.empty()) return 0.0;
  double acc = 0.0;
  const auto p = pred.data();
  const auto t = target.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    acc += d * d;
  }
  return acc / static_cast<double>(p.size());
}

double zero_sum_penalty(const KernelStack& stack, double lambda) {
  if (lambda < 0.0) throw ConfigError("zero_sum_penalty: lambda must be >= 0");
  if (lambda == 0.0) return 0.0;
  double acc = 0.0;
  for (const auto& layer : stack) {
    for (const auto& k : layer) {
      const double s = k.sum();
      acc += s * s;
    }
  }
  return lambda * acc;
}

double interior_mean_square(const Tensor3& input, std::size_t margin) {
  if (input.rows() <= 2 * margin) return 0.0;
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t r = margin; r < input.rows() - margin; ++r) {
    for (std::size_t c = 0; c < input.cols(); ++c) {
      for (std::size_t ch = 0; ch < input.channels(); ++ch) {
        const double v = input(r, c, ch);
        acc += v * v;
        ++n;
      }
    }
  }
  return acc / static_cast<double>(n);
}

}  // namespace stencilseer::ops
