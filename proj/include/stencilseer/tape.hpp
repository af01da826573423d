#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stencilseer/tensor.hpp"

namespace stencilseer {

/// Reverse-mode recorder for exactly the operations the encoder-decoder
/// needs. Every call evaluates eagerly and appends one record; backward()
/// replays adjoints in reverse execution order.
///
/// A tape belongs to one thread and one forward pass. Handles carry the id
/// of the tape that issued them, so mixing tapes is caught as a UsageError.
class GradTape {
 public:
  struct Var {
    std::uint64_t tape = 0;
    std::size_t index = 0;
  };
  struct Param {
    std::uint64_t tape = 0;
    std::size_t index = 0;
  };

  /// Adjoints produced by backward(): one KernelLayer per registered
  /// parameter and one tensor per recorded node.
  struct Gradients {
    std::vector<KernelLayer> params;
    std::vector<Tensor3> nodes;

    const KernelLayer& operator[](Param p) const { return params[p.index]; }
    const Tensor3& wrt(Var v) const { return nodes[v.index]; }
  };

  GradTape();

  Param parameter(KernelLayer kernels);
  Var constant(Tensor3 value);

  Var conv2d_valid(Var x, Param kernels);
  Var transpose_conv2d(Var x, Param kernels);
  Var avg_pool_halves(Var x);
  Var replicate_halves(Var x, std::size_t rows);
  Var tanh(Var x);
  Var channel_product(Var a, Var b);
  Var select_channel(Var x, std::size_t ch);
  Var concat_channels(Var a, Var b);

  /// Scalar mean squared error against a fixed target.
  Var mse(Var pred, const Tensor3& target);
  /// Scalar mean square of rows [margin, R - margin).
  Var interior_mean_square(Var x, std::size_t margin);
  /// Scalar lambda * sum_k (sum of kernel k)^2 over the given parameters.
  Var zero_sum_penalty(std::span<const Param> params, double lambda);
  Var add(Var a, Var b);
  Var scale(Var a, double s);

  const Tensor3& value(Var v) const;
  double scalar(Var v) const;
  const KernelLayer& kernels(Param p) const;

  /// Recorded operations, excluding constants and parameters.
  std::size_t operation_count() const { return op_count_; }

  Gradients backward(Var loss) const;

 private:
  enum class Op {
    constant,
    conv2d_valid,
    transpose_conv2d,
    avg_pool_halves,
    replicate_halves,
    tanh,
    channel_product,
    select_channel,
    concat_channels,
    mse,
    interior_mean_square,
    zero_sum_penalty,
    add,
    scale,
  };

  struct Node {
    Op op = Op::constant;
    std::size_t a = 0;
    std::size_t b = 0;
    std::size_t param = 0;
    std::size_t extent = 0;
    double coeff = 0.0;
    std::vector<std::size_t> params;
    Tensor3 target;
    Tensor3 value;
  };

  std::size_t check(Var v) const;
  std::size_t check(Param p) const;
  Var push(Node node);

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<KernelLayer> params_;
  std::size_t op_count_ = 0;
};

}  // namespace stencilseer
