#include "stencilseer/adadelta.hpp"

#include <cmath>

#include "stencilseer/errors.hpp"

namespace stencilseer {

AdaDeltaState::AdaDeltaState(std::size_t n, AdaDeltaParams params)
    : hp_(params), grad_sq_(n, 0.0), delta_sq_(n, 0.0) {
  if (!(hp_.lr > 0.0) || !(hp_.rho >= 0.0 && hp_.rho < 1.0) ||
      !(hp_.epsilon > 0.0) || !(hp_.decay >= 0.0)) {
    throw ConfigError("AdaDelta: need lr > 0, 0 <= rho < 1, eps > 0, decay >= 0");
  }
}

double AdaDeltaState::current_lr() const {
  return hp_.lr / (1.0 + hp_.decay * static_cast<double>(iterations_));
}

void AdaDeltaState::step(std::span<double> params,
                         std::span<const double> grads) {
  if (params.size() != grad_sq_.size() || grads.size() != grad_sq_.size()) {
    throw ShapeError("AdaDelta::step: parameter/gradient length mismatch");
  }
  const double lr = current_lr();
  const double rho = hp_.rho;
  const double eps = hp_.epsilon;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    grad_sq_[i] = rho * grad_sq_[i] + (1.0 - rho) * g * g;
    const double update =
        std::sqrt(delta_sq_[i] + eps) / std::sqrt(grad_sq_[i] + eps) * g;
    delta_sq_[i] = rho * delta_sq_[i] + (1.0 - rho) * update * update;
    params[i] -= lr * update;
  }
  ++iterations_;
}

}  // namespace stencilseer
