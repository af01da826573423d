#pragma once

#include <span>

#include "stencilseer/tensor.hpp"

// Forward kernels of the architecture and the adjoints used by GradTape.
// All functions are pure; shape violations throw ShapeError.
namespace stencilseer::ops {

/// Valid 2x2 cross-correlation, stride 1, no bias, no kernel flip:
/// out(r, c, k) = sum_{i,j,ch} kernel_k(i, j, ch) * in(r + i, c + j, ch).
Tensor3 conv2d_valid(const Tensor3& input, std::span<const Kernel2x2> kernels);

/// Adjoint of conv2d_valid with respect to its input:
/// out(r + i, c + j, k) += kernel_k(i, j, ch) * in(r, c, ch).
/// Output is one larger than the input along both axes.
Tensor3 transpose_conv2d(const Tensor3& input,
                         std::span<const Kernel2x2> kernels);

struct ConvGrads {
  Tensor3 input;
  KernelLayer kernels;
};

ConvGrads conv2d_valid_backward(const Tensor3& input,
                                std::span<const Kernel2x2> kernels,
                                const Tensor3& upstream);
ConvGrads transpose_conv2d_backward(const Tensor3& input,
                                    std::span<const Kernel2x2> kernels,
                                    const Tensor3& upstream);

/// Number of rows averaged into pooled row 0 (the first half takes the
/// extra row when `rows` is odd).
std::size_t first_half_rows(std::size_t rows);

/// Averages rows [0, ceil(R/2)) into row 0 and [ceil(R/2), R) into row 1.
Tensor3 avg_pool_halves(const Tensor3& input);
Tensor3 avg_pool_halves_backward(std::size_t rows, const Tensor3& upstream);

/// Expands a 2-row map back to `rows` rows, copying row 0 over the first
/// half and row 1 over the second (nearest-neighbour inverse of the pool).
Tensor3 replicate_halves(const Tensor3& pooled, std::size_t rows);
Tensor3 replicate_halves_backward(const Tensor3& upstream);

Tensor3 tanh_map(const Tensor3& input);

Tensor3 channel_product(const Tensor3& a, const Tensor3& b);

/// Channel-wise concatenation [a | b].
Tensor3 concat_channels(const Tensor3& a, const Tensor3& b);

double mse(const Tensor3& pred, const Tensor3& target);

/// lambda * sum over kernels of (sum of the kernel's weights)^2.
double zero_sum_penalty(const KernelStack& stack, double lambda);

/// Mean square over rows [margin, R - margin) of all columns and channels.
/// Zero when the interior band is empty.
double interior_mean_square(const Tensor3& input, std::size_t margin);

}  // namespace stencilseer::ops
