#include "stencilseer/verify.hpp"

#include <unsupported/Eigen/LevenbergMarquardt>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <stdexcept>

#include "stencilseer/errors.hpp"
#include "stencilseer/ops.hpp"

namespace stencilseer {
namespace {

/// 8 unknowns (two 2x2 kernels), 9 residuals (3x3 composition).
struct FactorFunctor : Eigen::DenseFunctor<double> {
  const Eigen::Matrix<double, 9, 1>& target;

  explicit FactorFunctor(const Eigen::Matrix<double, 9, 1>& t)
      : Eigen::DenseFunctor<double>(8, 9), target(t) {}

  int operator()(const InputType& x, ValueType& fvec) const {
    fvec.setZero(9);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k)
          for (int l = 0; l < 2; ++l)
            fvec((i + k) * 3 + (j + l)) += x(i * 2 + j) * x(4 + k * 2 + l);
    fvec -= target;
    return 0;
  }

  int df(const InputType& x, JacobianType& jac) const {
    jac.setZero(9, 8);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k)
          for (int l = 0; l < 2; ++l) {
            const int row = (i + k) * 3 + (j + l);
            jac(row, i * 2 + j) += x(4 + k * 2 + l);
            jac(row, 4 + k * 2 + l) += x(i * 2 + j);
          }
    return 0;
  }
};

}  // namespace

Stencil make_stencil(std::initializer_list<std::initializer_list<double>> rows) {
  return Tensor3::from_rows(rows);
}

Stencil kernel_as_stencil(const Kernel2x2& k, std::size_t ch) {
  if (ch >= k.in_channels()) throw ShapeError("kernel_as_stencil: bad channel");
  Stencil s(2, 2, 1);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) s(i, j) = k(i, j, ch);
  return s;
}

Stencil transpose(const Stencil& s) {
  Stencil t(s.cols(), s.rows(), 1);
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j) t(j, i) = s(i, j);
  return t;
}

Stencil pad_to(const Stencil& s, std::size_t rows, std::size_t cols) {
  if (rows < s.rows() || cols < s.cols()) {
    throw ShapeError("pad_to: target extent is smaller than the stencil");
  }
  Stencil p(rows, cols, 1);
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j) p(i, j) = s(i, j);
  return p;
}

AnalyticStencil analytic_stencil(Family family, const GenConfig& scheme,
                                 std::size_t depth) {
  if (depth == 0) throw ConfigError("analytic_stencil: depth must be >= 1");
  AnalyticStencil out;
  switch (family) {
    case Family::hyperbolic: {
      const double c = scheme.cfl;
      const Kernel2x2 ann = Kernel2x2::single(-c, 0.0, -(1.0 - c), 1.0);
      out.source_gain = 1.0;
      if (depth == 1) {
        out.stencil = kernel_as_stencil(ann);
        out.factors = KernelStack{{ann}};
      } else if (depth == 2) {
        KernelStack f{{ann}, {Kernel2x2::single(0.0, 1.0, 0.0, 0.0)}};
        out.stencil = compose_stack(f);
        out.factors = f;
      } else {
        out.stencil = kernel_as_stencil(ann);
      }
      break;
    }
    case Family::elliptic: {
      KernelStack f{{Kernel2x2::single(0.0, -1.0, 0.0, 1.0)},
                    {Kernel2x2::single(0.0, 1.0, 0.0, -1.0)}};
      out.stencil = compose_stack(f);
      out.source_gain = -scheme.dx * scheme.dx / scheme.a;
      if (depth == 2) out.factors = f;
      break;
    }
    case Family::parabolic: {
      const double r = scheme.cfl;
      out.stencil = Stencil(3, 3, 1);
      out.stencil(0, 1) = -r;
      out.stencil(1, 1) = -(1.0 - 2.0 * r);
      out.stencil(2, 1) = -r;
      out.stencil(1, 2) = 1.0;
      out.source_gain = 1.0;
      if (depth == 2) {
        // Two paths: x(1+y) * -r(1+y) carries the diffusion part and
        // xy * ((4r-1) + x) the remainder plus the time step.
        Kernel2x2 second(2);
        second(0, 0, 0) = -r;
        second(1, 0, 0) = -r;
        second(0, 0, 1) = 4.0 * r - 1.0;
        second(0, 1, 1) = 1.0;
        out.factors = KernelStack{{Kernel2x2::single(0.0, 1.0, 0.0, 1.0),
                                   Kernel2x2::single(0.0, 0.0, 0.0, 1.0)},
                                  {second}};
      }
      break;
    }
    case Family::coupled:
      throw ConfigError("analytic_stencil: the coupled family has no linear stencil");
  }
  return out;
}

Stencil compose(const Stencil& a, const Stencil& b) {
  if (a.empty() || b.empty()) throw ShapeError("compose: empty stencil");
  Stencil out(a.rows() + b.rows() - 1, a.cols() + b.cols() - 1, 1);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      for (std::size_t k = 0; k < b.rows(); ++k)
        for (std::size_t l = 0; l < b.cols(); ++l)
          out(i + k, j + l) += a(i, j) * b(k, l);
  return out;
}

Stencil compose_stack(const KernelStack& stack) {
  if (stack.empty()) throw UsageError("compose_stack: empty stack");
  for (const auto& layer : stack) {
    if (layer.size() != 1 || layer.front().in_channels() != 1) {
      throw UsageError(
          "compose_stack: multi-channel stack needs a declared path "
          "(use compose_linear)");
    }
  }
  Stencil acc = kernel_as_stencil(stack.front().front());
  for (std::size_t l = 1; l < stack.size(); ++l) {
    acc = compose(acc, kernel_as_stencil(stack[l].front()));
  }
  return acc;
}

Stencil compose_linear(const KernelStack& stack, std::size_t out_ch,
                       std::size_t in_ch) {
  if (stack.empty()) throw UsageError("compose_linear: empty stack");
  const std::size_t cin = stack.front().front().in_channels();
  if (in_ch >= cin) throw UsageError("compose_linear: bad image channel");
  // paths[k] = stencil from image channel in_ch to channel k of the layer.
  std::vector<Stencil> paths;
  for (const auto& ker : stack.front()) paths.push_back(kernel_as_stencil(ker, in_ch));
  for (std::size_t l = 1; l < stack.size(); ++l) {
    std::vector<Stencil> next;
    for (const auto& ker : stack[l]) {
      if (ker.in_channels() != paths.size()) {
        throw UsageError(
            "compose_linear: channel counts do not chain (coupled stack?)");
      }
      Stencil acc;
      for (std::size_t ch = 0; ch < paths.size(); ++ch) {
        Stencil term = compose(paths[ch], kernel_as_stencil(ker, ch));
        if (acc.empty()) {
          acc = std::move(term);
        } else {
          acc += term;
        }
      }
      next.push_back(std::move(acc));
    }
    paths = std::move(next);
  }
  if (out_ch >= paths.size()) throw UsageError("compose_linear: bad output channel");
  return paths[out_ch];
}

double kernel_similarity(const Stencil& learned, const Stencil& truth) {
  const std::size_t rows = std::max(learned.rows(), truth.rows());
  const std::size_t cols = std::max(learned.cols(), truth.cols());
  const Stencil a = pad_to(learned, rows, cols);
  const Stencil b = pad_to(truth, rows, cols);
  const double na = std::sqrt(inner_product(a, a));
  const double nb = std::sqrt(inner_product(b, b));
  if (na == 0.0 || nb == 0.0) {
    throw std::domain_error("kernel_similarity: undefined for a zero stencil");
  }
  return std::min(1.0, std::abs(inner_product(a, b)) / (na * nb));
}

double oriented_similarity(const Stencil& learned, const Stencil& truth) {
  return std::max(kernel_similarity(learned, truth),
                  kernel_similarity(transpose(learned), truth));
}

double ActivationReport::zero_feature_max_abs() const {
  return layers.empty() ? 0.0 : layers.back().interior_max_abs;
}

ActivationReport activation_report(const Encoding& enc) {
  ActivationReport rep;
  for (const Tensor3& m : enc.maps) {
    LayerActivation la;
    la.row_profile.assign(m.rows(), 0.0);
    const std::size_t per_row = m.cols() * m.channels();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const bool interior =
          r >= kActivationEdgeRows && r + kActivationEdgeRows < m.rows();
      double row_sum = 0.0;
      for (std::size_t c = 0; c < m.cols(); ++c) {
        for (std::size_t ch = 0; ch < m.channels(); ++ch) {
          const double v = std::abs(m(r, c, ch));
          row_sum += v;
          if (interior) {
            la.interior_max_abs = std::max(la.interior_max_abs, v);
            sum += v;
            ++count;
          } else {
            la.boundary_max_abs = std::max(la.boundary_max_abs, v);
          }
        }
      }
      la.row_profile[r] = per_row ? row_sum / static_cast<double>(per_row) : 0.0;
    }
    la.interior_mean_abs = count ? sum / static_cast<double>(count) : 0.0;
    rep.layers.push_back(std::move(la));
  }
  return rep;
}

ActivationReport activation_report(const Model& model, const Sample& sample) {
  if (sample.meta.family != model.config.family) {
    throw ShapeError("activation_report: sample family does not match model");
  }
  return activation_report(encode(model, sample.image));
}

double residual_oracle(const Stencil& stencil, const Tensor3& image,
                       std::size_t channel) {
  if (channel >= image.channels()) throw ShapeError("residual_oracle: bad channel");
  if (stencil.rows() > image.rows() || stencil.cols() > image.cols()) {
    throw ShapeError("residual_oracle: stencil larger than image");
  }
  const std::size_t out_rows = image.rows() - stencil.rows() + 1;
  const std::size_t out_cols = image.cols() - stencil.cols() + 1;
  const std::size_t margin = stencil.rows() + 1;
  double worst = 0.0;
  for (std::size_t r = margin; r + margin < out_rows; ++r) {
    for (std::size_t c = 0; c < out_cols; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < stencil.rows(); ++i)
        for (std::size_t j = 0; j < stencil.cols(); ++j)
          acc += stencil(i, j) * image(r + i, c + j, channel);
      worst = std::max(worst, std::abs(acc));
    }
  }
  return worst;
}

double residual_oracle(const Stencil& stencil, const Sample& sample,
                       std::size_t channel) {
  return residual_oracle(stencil, sample.image, channel);
}

Factorization best_factorization(const Stencil& target, std::size_t starts,
                                 std::uint64_t seed) {
  if (target.rows() > 3 || target.cols() > 3) {
    throw ShapeError("best_factorization: target must fit in 3x3");
  }
  const Stencil t = pad_to(target, 3, 3);
  Eigen::Matrix<double, 9, 1> tv;
  for (int i = 0; i < 9; ++i) tv(i) = t.data()[static_cast<std::size_t>(i)];
  const double scale = std::max(1e-300, tv.cwiseAbs().maxCoeff());
  const Eigen::Matrix<double, 9, 1> tn = tv / scale;

  FactorFunctor functor(tn);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::VectorXd best_x(8);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < std::max<std::size_t>(starts, 1); ++s) {
    Eigen::VectorXd x(8);
    if (s == 0) {
      // Target itself against a delta: exact whenever the target is 2x2.
      x << tn(0), tn(1), tn(3), tn(4), 1.0, 0.0, 0.0, 0.0;
    } else {
      for (int i = 0; i < 8; ++i) x(i) = dist(rng);
    }
    Eigen::LevenbergMarquardt<FactorFunctor> lm(functor);
    lm.setMaxfev(10000);
    lm.setXtol(1e-15);
    lm.setFtol(1e-15);
    lm.minimize(x);
    Eigen::VectorXd f(9);
    functor(x, f);
    const double r = f.norm();
    if (r < best) {
      best = r;
      best_x = x;
    }
  }
  // Balance the two factors and restore the target scale.
  double n1 = best_x.head(4).norm(), n2 = best_x.tail(4).norm();
  const double g = (n1 > 0.0 && n2 > 0.0) ? std::sqrt(n2 / n1) : 1.0;
  Factorization out;
  out.first = Kernel2x2(1);
  out.second = Kernel2x2(1);
  const double sq = std::sqrt(scale);
  for (std::size_t i = 0; i < 4; ++i) {
    out.first.weights()[i] = best_x(static_cast<int>(i)) * g * sq;
    out.second.weights()[i] = best_x(4 + static_cast<int>(i)) / g * sq;
  }
  out.residual = best * scale;
  return out;
}

void write_activation_csv(const ActivationReport& report,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "layer,stat,value\n" << std::setprecision(17);
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const auto& la = report.layers[l];
    out << l << ",interior_max_abs," << la.interior_max_abs << '\n';
    out << l << ",interior_mean_abs," << la.interior_mean_abs << '\n';
    out << l << ",boundary_max_abs," << la.boundary_max_abs << '\n';
    for (std::size_t r = 0; r < la.row_profile.size(); ++r) {
      out << l << ",row_" << r << ',' << la.row_profile[r] << '\n';
    }
  }
}

void write_stencil(const Stencil& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << s.rows() << ' ' << s.cols() << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t j = 0; j < s.cols(); ++j) out << (j ? " " : "") << s(i, j);
    out << '\n';
  }
}

Stencil read_stencil(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::size_t rows = 0, cols = 0;
  if (!(in >> rows >> cols) || rows == 0 || cols == 0 || rows > 64 || cols > 64) {
    throw FormatError("bad stencil header in " + path.string());
  }
  Stencil s(rows, cols, 1);
  for (double& v : s.data()) {
    std::string tok;
    if (!(in >> tok)) throw FormatError("stencil file is truncated");
    v = std::stod(tok);
  }
  return s;
}

}  // namespace stencilseer
