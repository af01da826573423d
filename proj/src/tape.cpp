#include "stencilseer/tape.hpp"

#include <atomic>
#include <cmath>

#include "stencilseer/errors.hpp"
#include "stencilseer/ops.hpp"

namespace stencilseer {
namespace {

std::atomic<std::uint64_t> next_tape_id{1};

Tensor3 scalar_tensor(double v) { return Tensor3(1, 1, 1, v); }

void accumulate(Tensor3& into, const Tensor3& g) {
  if (into.empty()) {
    into = g;
  } else {
    into += g;
  }
}

}  // namespace

GradTape::GradTape() : id_(next_tape_id.fetch_add(1)) {}

std::size_t GradTape::check(Var v) const {
  if (v.tape != id_ || v.index >= nodes_.size()) {
    throw UsageError("GradTape: variable is not recorded on this tape");
  }
  return v.index;
}

std::size_t GradTape::check(Param p) const {
  if (p.tape != id_ || p.index >= params_.size()) {
    throw UsageError("GradTape: parameter is not registered on this tape");
  }
  return p.index;
}

GradTape::Var GradTape::push(Node node) {
  if (node.op != Op::constant) ++op_count_;
  nodes_.push_back(std::move(node));
  return Var{id_, nodes_.size() - 1};
}

GradTape::Param GradTape::parameter(KernelLayer kernels) {
  params_.push_back(std::move(kernels));
  return Param{id_, params_.size() - 1};
}

GradTape::Var GradTape::constant(Tensor3 value) {
  Node n;
  n.op = Op::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

GradTape::Var GradTape::conv2d_valid(Var x, Param k) {
  Node n;
  n.op = Op::conv2d_valid;
  n.a = check(x);
  n.param = check(k);
  n.value = ops::conv2d_valid(nodes_[n.a].value, params_[n.param]);
  return push(std::move(n));
}

GradTape::Var GradTape::transpose_conv2d(Var x, Param k) {
  Node n;
  n.op = Op::transpose_conv2d;
  n.a = check(x);
  n.param = check(k);
  n.value = ops::transpose_conv2d(nodes_[n.a].value, params_[n.param]);
  return push(std::move(n));
}

GradTape::Var GradTape::avg_pool_halves(Var x) {
  Node n;
  n.op = Op::avg_pool_halves;
  n.a = check(x);
  n.value = ops::avg_pool_halves(nodes_[n.a].value);
  return push(std::move(n));
}

GradTape::Var GradTape::replicate_halves(Var x, std::size_t rows) {
  Node n;
  n.op = Op::replicate_halves;
  n.a = check(x);
  n.value = ops::replicate_halves(nodes_[n.a].value, rows);
  return push(std::move(n));
}

GradTape::Var GradTape::tanh(Var x) {
  Node n;
  n.op = Op::tanh;
  n.a = check(x);
  n.value = ops::tanh_map(nodes_[n.a].value);
  return push(std::move(n));
}

GradTape::Var GradTape::channel_product(Var a, Var b) {
  Node n;
  n.op = Op::channel_product;
  n.a = check(a);
  n.b = check(b);
  n.value = ops::channel_product(nodes_[n.a].value, nodes_[n.b].value);
  return push(std::move(n));
}

GradTape::Var GradTape::select_channel(Var x, std::size_t ch) {
  Node n;
  n.op = Op::select_channel;
  n.a = check(x);
  n.extent = ch;
  n.value = nodes_[n.a].value.channel(ch);
  return push(std::move(n));
}

GradTape::Var GradTape::concat_channels(Var a, Var b) {
  Node n;
  n.op = Op::concat_channels;
  n.a = check(a);
  n.b = check(b);
  n.value = ops::concat_channels(nodes_[n.a].value, nodes_[n.b].value);
  return push(std::move(n));
}

GradTape::Var GradTape::mse(Var pred, const Tensor3& target) {
  Node n;
  n.op = Op::mse;
  n.a = check(pred);
  n.target = target;
  n.value = scalar_tensor(ops::mse(nodes_[n.a].value, target));
  return push(std::move(n));
}

GradTape::Var GradTape::interior_mean_square(Var x, std::size_t margin) {
  Node n;
  n.op = Op::interior_mean_square;
  n.a = check(x);
  n.extent = margin;
  n.value = scalar_tensor(ops::interior_mean_square(nodes_[n.a].value, margin));
  return push(std::move(n));
}

GradTape::Var GradTape::zero_sum_penalty(std::span<const Param> params,
                                         double lambda) {
  if (lambda < 0.0) throw ConfigError("zero_sum_penalty: lambda must be >= 0");
  Node n;
  n.op = Op::zero_sum_penalty;
  n.coeff = lambda;
  double acc = 0.0;
  for (Param p : params) {
    n.params.push_back(check(p));
    for (const auto& k : params_[n.params.back()]) {
      const double s = k.sum();
      acc += s * s;
    }
  }
  n.value = scalar_tensor(lambda * acc);
  return push(std::move(n));
}

GradTape::Var GradTape::add(Var a, Var b) {
  Node n;
  n.op = Op::add;
  n.a = check(a);
  n.b = check(b);
  n.value = nodes_[n.a].value + nodes_[n.b].value;
  return push(std::move(n));
}

GradTape::Var GradTape::scale(Var a, double s) {
  Node n;
  n.op = Op::scale;
  n.a = check(a);
  n.coeff = s;
  n.value = s * nodes_[n.a].value;
  return push(std::move(n));
}

const Tensor3& GradTape::value(Var v) const { return nodes_[check(v)].value; }

double GradTape::scalar(Var v) const {
  const Tensor3& t = value(v);
  if (t.size() != 1) throw UsageError("GradTape::scalar: node is not scalar");
  return t.data()[0];
}

const KernelLayer& GradTape::kernels(Param p) const {
  return params_[check(p)];
}

GradTape::Gradients GradTape::backward(Var loss) const {
  const std::size_t root = check(loss);
  if (nodes_[root].value.size() != 1) {
    throw UsageError("GradTape::backward: loss must be a scalar node");
  }

  Gradients g;
  g.params.reserve(params_.size());
  for (const auto& layer : params_) {
    KernelLayer zero;
    zero.reserve(layer.size());
    for (const auto& k : layer) zero.emplace_back(k.in_channels());
    g.params.push_back(std::move(zero));
  }
  g.nodes.resize(nodes_.size());
  g.nodes[root] = scalar_tensor(1.0);

  auto add_param = [&](std::size_t p, const KernelLayer& dk) {
    for (std::size_t k = 0; k < dk.size(); ++k) {
      auto dst = g.params[p][k].weights();
      auto src = dk[k].weights();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  };

  for (std::size_t idx = root + 1; idx-- > 0;) {
    const Node& n = nodes_[idx];
    const Tensor3& up = g.nodes[idx];
    if (up.empty()) continue;
    switch (n.op) {
      case Op::constant:
        break;
      case Op::conv2d_valid: {
        auto cg = ops::conv2d_valid_backward(nodes_[n.a].value,
                                             params_[n.param], up);
        accumulate(g.nodes[n.a], cg.input);
        add_param(n.param, cg.kernels);
        break;
      }
      case Op::transpose_conv2d: {
        auto cg = ops::transpose_conv2d_backward(nodes_[n.a].value,
                                                 params_[n.param], up);
        accumulate(g.nodes[n.a], cg.input);
        add_param(n.param, cg.kernels);
        break;
      }
      case Op::avg_pool_halves:
        accumulate(g.nodes[n.a],
                   ops::avg_pool_halves_backward(nodes_[n.a].value.rows(), up));
        break;
      case Op::replicate_halves:
        accumulate(g.nodes[n.a], ops::replicate_halves_backward(up));
        break;
      case Op::tanh: {
        Tensor3 d = up;
        auto dd = d.data();
        const auto y = n.value.data();
        for (std::size_t i = 0; i < dd.size(); ++i) dd[i] *= 1.0 - y[i] * y[i];
        accumulate(g.nodes[n.a], d);
        break;
      }
      case Op::channel_product:
        accumulate(g.nodes[n.a], ops::channel_product(up, nodes_[n.b].value));
        accumulate(g.nodes[n.b], ops::channel_product(up, nodes_[n.a].value));
        break;
      case Op::select_channel: {
        const Tensor3& src = nodes_[n.a].value;
        Tensor3 d(src.rows(), src.cols(), src.channels());
        for (std::size_t r = 0; r < src.rows(); ++r)
          for (std::size_t c = 0; c < src.cols(); ++c)
            d(r, c, n.extent) = up(r, c);
        accumulate(g.nodes[n.a], d);
        break;
      }
      case Op::concat_channels: {
        const Tensor3& a = nodes_[n.a].value;
        const Tensor3& b = nodes_[n.b].value;
        Tensor3 da(a.rows(), a.cols(), a.channels());
        Tensor3 db(b.rows(), b.cols(), b.channels());
        for (std::size_t r = 0; r < a.rows(); ++r) {
          for (std::size_t c = 0; c < a.cols(); ++c) {
            for (std::size_t ch = 0; ch < a.channels(); ++ch)
              da(r, c, ch) = up(r, c, ch);
            for (std::size_t ch = 0; ch < b.channels(); ++ch)
              db(r, c, ch) = up(r, c, a.channels() + ch);
          }
        }
        accumulate(g.nodes[n.a], da);
        accumulate(g.nodes[n.b], db);
        break;
      }
      case Op::mse: {
        const Tensor3& p = nodes_[n.a].value;
        const double s =
            2.0 * up.data()[0] / static_cast<double>(p.size() ? p.size() : 1);
        Tensor3 d(p.rows(), p.cols(), p.channels());
        auto dd = d.data();
        const auto pd = p.data();
        const auto td = n.target.data();
        for (std::size_t i = 0; i < dd.size(); ++i) dd[i] = s * (pd[i] - td[i]);
        accumulate(g.nodes[n.a], d);
        break;
      }
      case Op::interior_mean_square: {
        const Tensor3& x = nodes_[n.a].value;
        Tensor3 d(x.rows(), x.cols(), x.channels());
        if (x.rows() > 2 * n.extent) {
          const std::size_t count =
              (x.rows() - 2 * n.extent) * x.cols() * x.channels();
          const double s = 2.0 * up.data()[0] / static_cast<double>(count);
          for (std::size_t r = n.extent; r < x.rows() - n.extent; ++r)
            for (std::size_t c = 0; c < x.cols(); ++c)
              for (std::size_t ch = 0; ch < x.channels(); ++ch)
                d(r, c, ch) = s * x(r, c, ch);
        }
        accumulate(g.nodes[n.a], d);
        break;
      }
      case Op::zero_sum_penalty: {
        const double u = up.data()[0];
        for (std::size_t p : n.params) {
          for (std::size_t k = 0; k < params_[p].size(); ++k) {
            const double dsum = 2.0 * n.coeff * params_[p][k].sum() * u;
            for (double& w : g.params[p][k].weights()) w += dsum;
          }
        }
        break;
      }
      case Op::add:
        accumulate(g.nodes[n.a], up);
        accumulate(g.nodes[n.b], up);
        break;
      case Op::scale:
        accumulate(g.nodes[n.a], n.coeff * up);
        break;
    }
  }
  return g;
}

}  // namespace stencilseer
