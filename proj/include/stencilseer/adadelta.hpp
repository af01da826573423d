#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace stencilseer {

struct AdaDeltaParams {
  double lr = 0.85;
  double rho = 0.95;
  double epsilon = 1e-6;
  /// Keras-style time decay: effective lr = lr / (1 + decay * iterations).
  double decay = 0.0;
};

/// Per-parameter accumulators E[g^2] and E[dx^2] of Zeiler's AdaDelta.
class AdaDeltaState {
 public:
  AdaDeltaState() = default;
  AdaDeltaState(std::size_t n, AdaDeltaParams params = {});

  /// One update of `params` in place from `grads`.
  void step(std::span<double> params, std::span<const double> grads);

  std::size_t size() const { return grad_sq_.size(); }
  std::size_t iterations() const { return iterations_; }
  double current_lr() const;
  const AdaDeltaParams& hyper() const { return hp_; }
  std::span<const double> grad_accumulator() const { return grad_sq_; }
  std::span<const double> update_accumulator() const { return delta_sq_; }

 private:
  AdaDeltaParams hp_;
  std::vector<double> grad_sq_;
  std::vector<double> delta_sq_;
  std::size_t iterations_ = 0;
};

}  // namespace stencilseer
