#include "stencilseer/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "stencilseer/errors.hpp"

namespace stencilseer {
namespace {

std::vector<double> or_zeros(const std::vector<double>& v, std::size_t n,
                             const char* what) {
  if (v.empty()) return std::vector<double>(n, 0.0);
  if (v.size() != n) {
    throw ShapeError(std::string("SourceSpec: ") + what + " has length " +
                     std::to_string(v.size()) + ", expected " +
                     std::to_string(n));
  }
  return v;
}

void store_column(Tensor3& img, std::size_t t, std::span<const double> col,
                  std::size_t ch = 0) {
  for (std::size_t i = 0; i < col.size(); ++i) img(i, t, ch) = col[i];
}

Sample make_sample(const GenConfig& cfg, std::size_t channels) {
  Sample s;
  s.image = Tensor3(cfg.W, cfg.H, channels);
  s.boundary = Tensor3(2, cfg.H, channels);
  s.meta.family = cfg.family;
  s.meta.a = cfg.a;
  s.meta.b = cfg.b;
  s.meta.cfl = cfg.cfl;
  s.meta.seed = cfg.seed;
  return s;
}

void fill_labels(Sample& s, const std::vector<double>& inj,
                 const std::vector<double>& prod, double gain,
                 std::size_t ch = 0) {
  for (std::size_t t = 0; t < inj.size(); ++t) {
    s.boundary(0, t, ch) = gain * inj[t];
    s.boundary(1, t, ch) = gain * prod[t];
  }
}

}  // namespace

std::string_view family_name(Family f) {
  switch (f) {
    case Family::hyperbolic: return "hyperbolic";
    case Family::elliptic: return "elliptic";
    case Family::parabolic: return "parabolic";
    case Family::coupled: return "coupled";
  }
  throw ConfigError("unknown family tag");
}

Family parse_family(std::string_view name) {
  if (name == "hyperbolic" || name == "hyp") return Family::hyperbolic;
  if (name == "elliptic" || name == "elp") return Family::elliptic;
  if (name == "parabolic" || name == "par") return Family::parabolic;
  if (name == "coupled" || name == "cpl") return Family::coupled;
  throw ConfigError("unknown family '" + std::string(name) + "'");
}

std::size_t family_channels(Family f) { return f == Family::coupled ? 2 : 1; }

void GenConfig::validate() const {
  if (W < 4 || H < 4) throw ConfigError("GenConfig: W and H must be >= 4");
  if (!(alpha > 0.0)) throw ConfigError("GenConfig: alpha must be > 0");
  if (!(dx > 0.0) || !(dt > 0.0) || !(a > 0.0) || !(b > 0.0)) {
    throw ConfigError("GenConfig: dx, dt, a, b must be > 0");
  }
  if (family == Family::hyperbolic && !(cfl > 0.0 && cfl <= 1.0)) {
    throw StabilityError("hyperbolic: CFL number " + std::to_string(cfl) +
                         " outside (0, 1]");
  }
  if (family == Family::parabolic && !(cfl > 0.0 && cfl <= 0.5)) {
    throw StabilityError("parabolic: diffusion number " + std::to_string(cfl) +
                         " outside (0, 0.5]");
  }
}

double GenConfig::time_step() const {
  switch (family) {
    case Family::hyperbolic: return cfl * b * dx / a;
    case Family::parabolic: return cfl * b * dx * dx / a;
    default: return dt;
  }
}

std::size_t injection_row() { return 1; }
std::size_t production_row(std::size_t W) { return W - 2; }

std::vector<double> smooth_signal(std::size_t n, double amplitude,
                                  std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32), 0x5157u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> freq(0.5, std::max(1.0, n / 3.0));
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(-1.0, 1.0);
  std::vector<double> s(n, 0.0);
  for (int mode = 0; mode < 4; ++mode) {
    const double f = freq(rng);
    const double ph = phase(rng);
    const double am = amp(rng);
    for (std::size_t t = 0; t < n; ++t) {
      s[t] += am * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) /
                                static_cast<double>(n) +
                            ph);
    }
  }
  double peak = 0.0;
  for (double v : s) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) return s;
  for (double& v : s) v *= amplitude / peak;
  return s;
}

std::vector<double> solve_tridiagonal_neumann(std::span<const double> p,
                                              double a, double dx) {
  const std::size_t W = p.size();
  if (W < 3) throw ShapeError("solve_tridiagonal_neumann: need W >= 3");
  if (!(a > 0.0) || !(dx > 0.0)) {
    throw ConfigError("solve_tridiagonal_neumann: a and dx must be > 0");
  }
  // Summing all rows cancels the left-hand side, leaving this weighted total.
  double net = p[0] + p[W - 1];
  double scale = std::abs(p[0]) + std::abs(p[W - 1]);
  for (std::size_t i = 1; i + 1 < W; ++i) {
    net += p[i] * dx;
    scale += std::abs(p[i]) * dx;
  }
  if (std::abs(net) > 1e-12 * std::max(1.0, scale)) {
    throw CompatibilityError("Neumann source does not sum to zero (net " +
                             std::to_string(net) + ")");
  }

  // Pin u0 = 0 and drop the redundant first row; the remaining system in
  // u1..u[W-1] is tridiagonal and nonsingular.
  const std::size_t n = W - 1;
  const double k = a / (dx * dx);
  std::vector<double> lo(n, 0.0), di(n, 0.0), up(n, 0.0), rhs(n, 0.0);
  for (std::size_t i = 1; i + 1 < W; ++i) {
    const std::size_t row = i - 1;
    if (i > 1) lo[row] = k;
    di[row] = -2.0 * k;
    up[row] = k;
    rhs[row] = p[i];
  }
  lo[n - 1] = k;
  di[n - 1] = -k;
  rhs[n - 1] = p[W - 1] / dx;

  for (std::size_t i = 1; i < n; ++i) {
    if (di[i - 1] == 0.0) throw SolverError("Thomas sweep hit a zero pivot");
    const double m = lo[i] / di[i - 1];
    di[i] -= m * up[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  if (di[n - 1] == 0.0) throw SolverError("Thomas sweep hit a zero pivot");
  std::vector<double> u(W, 0.0);
  u[n] = rhs[n - 1] / di[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) {
    u[i + 1] = (rhs[i] - up[i] * u[i + 2]) / di[i];
  }
  double mean = 0.0;
  for (double v : u) mean += v;
  mean /= static_cast<double>(W);
  for (double& v : u) v -= mean;
  return u;
}

std::vector<double> upwind_transport_step(std::span<const double> v,
                                          std::span<const double> face_velocity,
                                          double dt_over_b_dx) {
  const std::size_t W = v.size();
  if (face_velocity.size() != W + 1) {
    throw ShapeError("upwind_transport_step: need W + 1 face velocities");
  }
  std::vector<double> flux(W + 1, 0.0);
  for (std::size_t f = 0; f <= W; ++f) {
    const double w = face_velocity[f];
    const double left = f > 0 ? v[f - 1] : 0.0;
    const double right = f < W ? v[f] : 0.0;
    flux[f] = w >= 0.0 ? w * left : w * right;
  }
  std::vector<double> out(W);
  for (std::size_t i = 0; i < W; ++i) {
    out[i] = v[i] - dt_over_b_dx * (flux[i + 1] - flux[i]);
  }
  return out;
}

Sample gen_hyperbolic(const GenConfig& cfg, const SourceSpec& src) {
  cfg.validate();
  const std::size_t W = cfg.W, H = cfg.H;
  const auto q0 = or_zeros(src.q0, H, "q0");
  const auto qL = or_zeros(src.qL, H, "qL");
  auto v = or_zeros(src.g, W, "g");
  const double dt = cfg.time_step();
  const double lam = dt / (cfg.b * cfg.dx);
  const double gain = dt / cfg.b;
  const std::vector<double> faces(W + 1, cfg.a);
  const std::size_t i_in = injection_row(), i_out = production_row(W);

  Sample s = make_sample(cfg, 1);
  v[i_in] += gain * q0[0];
  v[i_out] += gain * qL[0];
  store_column(s.image, 0, v);
  for (std::size_t n = 1; n < H; ++n) {
    v = upwind_transport_step(v, faces, lam);
    v[i_in] += gain * q0[n];
    v[i_out] += gain * qL[n];
    store_column(s.image, n, v);
  }
  fill_labels(s, q0, qL, gain);
  return s;
}

Sample gen_elliptic(const GenConfig& cfg, const SourceSpec& src) {
  cfg.validate();
  const std::size_t W = cfg.W, H = cfg.H;
  const auto p0 = or_zeros(src.p0, H, "p0");
  const auto pL = or_zeros(src.pL, H, "pL");
  Sample s = make_sample(cfg, 1);
  std::vector<double> p(W, 0.0);
  for (std::size_t t = 0; t < H; ++t) {
    p[injection_row()] = p0[t];
    p[production_row(W)] = pL[t];
    store_column(s.image, t, solve_tridiagonal_neumann(p, cfg.a, cfg.dx));
  }
  fill_labels(s, p0, pL, 1.0);
  return s;
}

Sample gen_parabolic(const GenConfig& cfg, const SourceSpec& src) {
  cfg.validate();
  const std::size_t W = cfg.W, H = cfg.H;
  const auto p0 = or_zeros(src.p0, H, "p0");
  const auto pL = or_zeros(src.pL, H, "pL");
  auto u = or_zeros(src.f, W, "f");
  const double r = cfg.cfl;
  const double gain = cfg.time_step() / cfg.b;
  const std::size_t i_in = injection_row(), i_out = production_row(W);

  Sample s = make_sample(cfg, 1);
  u[i_in] += gain * p0[0];
  u[i_out] += gain * pL[0];
  store_column(s.image, 0, u);
  std::vector<double> next(W);
  for (std::size_t n = 1; n < H; ++n) {
    for (std::size_t i = 0; i < W; ++i) {
      const double left = i > 0 ? u[i - 1] : u[i];
      const double right = i + 1 < W ? u[i + 1] : u[i];
      next[i] = u[i] + r * (right - 2.0 * u[i] + left);
    }
    next[i_in] += gain * p0[n];
    next[i_out] += gain * pL[n];
    u.swap(next);
    store_column(s.image, n, u);
  }
  fill_labels(s, p0, pL, gain);
  return s;
}

namespace {

struct CoupledFlow {
  std::vector<std::vector<double>> u;
  std::vector<std::vector<double>> faces;
  double peak = 0.0;
};

CoupledFlow coupled_flow(const GenConfig& cfg, const SourceSpec& src) {
  const std::size_t W = cfg.W, H = cfg.H;
  const auto p0 = or_zeros(src.p0, H, "p0");
  const auto pL = or_zeros(src.pL, H, "pL");
  CoupledFlow flow;
  std::vector<double> p(W, 0.0);
  for (std::size_t n = 0; n < H; ++n) {
    p[injection_row()] = p0[n];
    p[production_row(W)] = pL[n];
    auto u = solve_tridiagonal_neumann(p, cfg.a, cfg.dx);
    // Datum at the injection end: with a one-signed pressure pair the
    // velocity then keeps one sign and the flow runs injection to production.
    const double datum = u[0];
    for (double& x : u) x -= datum;
    std::vector<double> faces(W + 1, 0.0);
    if (src.forced_velocity) {
      std::fill(faces.begin(), faces.end(), *src.forced_velocity);
    } else {
      faces[0] = u[0];
      faces[W] = u[W - 1];
      for (std::size_t f = 1; f < W; ++f) faces[f] = 0.5 * (u[f - 1] + u[f]);
    }
    if (n + 1 < H) {
      for (double w : faces) flow.peak = std::max(flow.peak, std::abs(w));
    }
    flow.u.push_back(std::move(u));
    flow.faces.push_back(std::move(faces));
  }
  return flow;
}

double step_from_peak(const GenConfig& cfg, double peak) {
  return peak > 0.0 ? cfg.cfl * cfg.b * cfg.dx / peak : cfg.dt;
}

}  // namespace

double coupled_time_step(const GenConfig& cfg, const SourceSpec& src) {
  cfg.validate();
  return step_from_peak(cfg, coupled_flow(cfg, src).peak);
}

Sample gen_coupled(const GenConfig& cfg, const SourceSpec& src) {
  cfg.validate();
  const std::size_t W = cfg.W, H = cfg.H;
  const auto p0 = or_zeros(src.p0, H, "p0");
  const auto pL = or_zeros(src.pL, H, "pL");
  const auto q0 = or_zeros(src.q0, H, "q0");
  const auto qL = or_zeros(src.qL, H, "qL");
  auto v = or_zeros(src.g, W, "g");
  const CoupledFlow flow = coupled_flow(cfg, src);
  const double dt = step_from_peak(cfg, flow.peak);
  const double lam = dt / (cfg.b * cfg.dx);
  const double gain = dt / cfg.b;
  const std::size_t i_in = injection_row(), i_out = production_row(W);

  Sample s = make_sample(cfg, 2);
  v[i_in] += gain * q0[0];
  v[i_out] += gain * qL[0];
  for (std::size_t n = 0; n < H; ++n) {
    store_column(s.image, n, flow.u[n], 0);
    store_column(s.image, n, v, 1);
    if (n + 1 == H) break;

    double peak = 0.0;
    for (double w : flow.faces[n]) peak = std::max(peak, std::abs(w));
    if (peak * lam > 1.0) {
      throw StabilityError("coupled: transport CFL " +
                           std::to_string(peak * lam) + " > 1 at step " +
                           std::to_string(n));
    }
    v = upwind_transport_step(v, flow.faces[n], lam);
    v[i_in] += gain * q0[n + 1];
    v[i_out] += gain * qL[n + 1];
  }
  fill_labels(s, p0, pL, 1.0, 0);
  fill_labels(s, q0, qL, gain, 1);
  return s;
}

Sample generate(const GenConfig& cfg, const SourceSpec& src) {
  switch (cfg.family) {
    case Family::hyperbolic: return gen_hyperbolic(cfg, src);
    case Family::elliptic: return gen_elliptic(cfg, src);
    case Family::parabolic: return gen_parabolic(cfg, src);
    case Family::coupled: return gen_coupled(cfg, src);
  }
  throw ConfigError("generate: unknown family");
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

SourceSpec random_sources(const GenConfig& cfg, std::uint64_t seed) {
  const std::size_t W = cfg.W, H = cfg.H;
  const double al = cfg.alpha;
  auto sig = [&](std::size_t n, std::uint64_t k) {
    return smooth_signal(n, al, sample_seed(seed, k));
  };
  SourceSpec src;
  switch (cfg.family) {
    case Family::hyperbolic:
      src.q0 = sig(H, 1);
      if (cfg.random_initial) src.g = sig(W, 2);
      break;
    case Family::elliptic:
      src.p0 = sig(H, 1);
      src.pL = src.p0;
      for (double& v : src.pL) v = -v;
      break;
    case Family::parabolic:
      src.p0 = sig(H, 1);
      src.pL = sig(H, 3);
      if (cfg.random_initial) src.f = sig(W, 2);
      break;
    case Family::coupled: {
      // One-signed pressure pair keeps the flow direction fixed per cell.
      src.p0 = sig(H, 1);
      for (double& v : src.p0) v = 0.75 * al + 0.25 * v;
      src.pL = src.p0;
      for (double& v : src.pL) v = -v;
      // Scale q so the per-step increments dt*q/b stay alpha-sized.
      const double q_scale = cfg.b / coupled_time_step(cfg, src);
      src.q0 = sig(H, 4);
      for (double& v : src.q0) v *= q_scale;
      if (cfg.random_initial) src.g = sig(W, 2);
      break;
    }
  }
  return src;
}

Dataset make_dataset(const GenConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.family = cfg.family;
  ds.samples.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    GenConfig c = cfg;
    c.seed = sample_seed(cfg.seed, i);
    ds.samples.push_back(generate(c, random_sources(c, c.seed)));
  }
  split_dataset(ds, cfg.seed);
  return ds;
}

void split_dataset(Dataset& ds, std::uint64_t seed, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split_dataset: train fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.samples.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(sample_seed(seed, 0xA11CE));
  // Fisher-Yates with an explicit bound draw so the permutation does not
  // depend on the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(n)));
  ds.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
}

std::size_t Dataset::W() const {
  return samples.empty() ? 0 : samples.front().image.rows();
}
std::size_t Dataset::H() const {
  return samples.empty() ? 0 : samples.front().image.cols();
}
std::size_t Dataset::channels() const {
  return samples.empty() ? 0 : samples.front().image.channels();
}

}  // namespace stencilseer
