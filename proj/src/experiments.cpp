#include "stencilseer/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>
#include <thread>

#include "stencilseer/errors.hpp"

namespace stencilseer {
namespace {

double frobenius(const Tensor3& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += v * v;
  return std::sqrt(acc);
}

template <class Fn>
void run_parallel(std::size_t count, std::size_t threads, Fn&& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void require_elliptic(const Dataset& ds, const GenConfig& scheme, const char* who) {
  if (ds.family != Family::elliptic || scheme.family != Family::elliptic) {
    throw ConfigError(std::string(who) + ": needs an elliptic dataset");
  }
  if (ds.samples.empty()) throw ConfigError(std::string(who) + ": empty dataset");
}

AblationSetting train_setting(const Dataset& ds, std::vector<std::size_t> widths,
                              const AblationOptions& opts) {
  ModelConfig cfg = ModelConfig::defaults(Family::elliptic);
  cfg.widths = std::move(widths);
  if (opts.lambda_zf >= 0.0) cfg.lambda_zf = opts.lambda_zf;
  Model model = build_model(cfg, opts.seed);
  TrainOptions to = opts.train;
  to.seed = opts.seed;
  to.on_epoch = nullptr;
  const TrainReport rep = train(model, ds, to);

  AblationSetting s;
  s.widths = cfg.widths;
  s.diverged = rep.diverged;
  s.stop_reason = rep.stop_reason;
  s.epochs = rep.epochs_run;
  s.encoder = model.encoder;
  if (rep.diverged || rep.history.empty()) {
    s.train_mse = s.val_mse = std::numeric_limits<double>::infinity();
    s.activation_err = std::numeric_limits<double>::infinity();
    return s;
  }
  s.train_mse = rep.final_train_mse();
  s.val_mse = rep.final_val_mse();
  const auto& eval = ds.val.empty() ? ds.train : ds.val;
  double acc = 0.0;
  for (std::size_t i : eval) {
    acc += activation_report(model, ds.samples[i]).zero_feature_max_abs();
  }
  s.activation_err = acc / static_cast<double>(eval.size());
  return s;
}

const AblationSetting* find_setting(const AblationResult& r, const std::string& label) {
  for (const auto& s : r.settings)
    if (s.label == label) return &s;
  return nullptr;
}

double safe_similarity(const Stencil& a, const Stencil& b) {
  try {
    return placement_similarity(a, b);
  } catch (const std::domain_error&) {
    return 0.0;
  }
}

}  // namespace

std::size_t thread_budget() {
  const char* env = std::getenv("STENCILSEER_THREADS");
  if (!env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) return 1;
  return static_cast<std::size_t>(v);
}

double placement_similarity(const Stencil& learned, const Stencil& truth) {
  auto best_over_shifts = [](const Stencil& a, const Stencil& b) {
    const std::size_t rows = std::max(a.rows(), b.rows());
    const std::size_t cols = std::max(a.cols(), b.cols());
    const Stencil& small = (a.rows() * a.cols() <= b.rows() * b.cols()) ? a : b;
    const Stencil& large = (&small == &a) ? b : a;
    double best = 0.0;
    for (std::size_t dr = 0; dr + small.rows() <= rows; ++dr) {
      for (std::size_t dc = 0; dc + small.cols() <= cols; ++dc) {
        Stencil shifted(rows, cols, 1);
        for (std::size_t i = 0; i < small.rows(); ++i)
          for (std::size_t j = 0; j < small.cols(); ++j)
            shifted(i + dr, j + dc) = small(i, j);
        best = std::max(best, kernel_similarity(shifted, pad_to(large, rows, cols)));
      }
    }
    return best;
  };
  return std::max(best_over_shifts(learned, truth),
                  best_over_shifts(transpose(learned), truth));
}

AblationResult ablate_depth(const Dataset& ds, const GenConfig& scheme,
                            const std::vector<std::size_t>& depths,
                            const AblationOptions& opts) {
  require_elliptic(ds, scheme, "ablate_depth");
  if (depths.empty()) throw ConfigError("ablate_depth: no depths given");
  for (std::size_t d : depths)
    if (d == 0) throw ConfigError("ablate_depth: depth must be >= 1");

  const Stencil truth = analytic_stencil(Family::elliptic, scheme, 2).stencil;
  AblationResult r;
  r.axis = "depth";
  r.settings.resize(depths.size());
  run_parallel(depths.size(), opts.threads ? opts.threads : thread_budget(),
               [&](std::size_t i) {
                 AblationSetting s =
                     train_setting(ds, std::vector<std::size_t>(depths[i], 1), opts);
                 s.label = "d" + std::to_string(depths[i]);
                 if (!s.diverged) {
                   s.similarity = safe_similarity(compose_linear(s.encoder), truth);
                 }
                 r.settings[i] = std::move(s);
               });

  for (const auto& s : r.settings) {
    if (s.diverged) {
      r.failure = s.label + " diverged; ordering not checked";
      return r;
    }
  }
  const auto* d1 = find_setting(r, "d1");
  const auto* d2 = find_setting(r, "d2");
  const auto* d3 = find_setting(r, "d3");
  if (!d1 || !d2 || !d3) {
    r.failure = "ordering needs depths 1, 2 and 3";
    return r;
  }
  std::string fail;
  if (!(d2->train_mse < d3->train_mse && d3->train_mse < d1->train_mse))
    fail += "train MSE ordering d2 < d3 < d1 violated; ";
  if (!(d2->activation_err < d3->activation_err &&
        d3->activation_err < d1->activation_err))
    fail += "activation ordering d2 < d3 < d1 violated; ";
  if (!(d2->similarity >= 0.999)) fail += "similarity(d2) < 0.999; ";
  if (!(d1->similarity < 0.9)) fail += "similarity(d1) >= 0.9; ";
  r.passed = fail.empty();
  r.failure = fail;
  return r;
}

AblationResult ablate_width(const Dataset& ds, const GenConfig& scheme,
                            const std::vector<std::size_t>& k1,
                            const AblationOptions& opts) {
  require_elliptic(ds, scheme, "ablate_width");
  if (k1.empty()) throw ConfigError("ablate_width: no widths given");
  for (std::size_t k : k1)
    if (k == 0) throw ConfigError("ablate_width: K1 must be >= 1");

  const AnalyticStencil as = analytic_stencil(Family::elliptic, scheme, 2);
  const Stencil factor = kernel_as_stencil(as.factors->front().front());
  AblationResult r;
  r.axis = "width";
  r.settings.resize(k1.size());
  run_parallel(k1.size(), opts.threads ? opts.threads : thread_budget(),
               [&](std::size_t i) {
                 AblationSetting s = train_setting(ds, {k1[i], 1}, opts);
                 s.label = "K1=" + std::to_string(k1[i]);
                 for (const Kernel2x2& k : s.encoder.front()) {
                   s.similarity =
                       std::max(s.similarity, safe_similarity(kernel_as_stencil(k), factor));
                 }
                 r.settings[i] = std::move(s);
               });

  std::string fail;
  for (const auto& s : r.settings) {
    if (s.diverged) {
      r.failure = s.label + " diverged; contract not checked";
      return r;
    }
    if (s.widths.front() == 1) {
      if (!(s.similarity >= 0.999)) fail += s.label + " similarity < 0.999; ";
    } else {
      if (!(s.train_mse <= 1e-5)) fail += s.label + " loss > 1e-5; ";
      if (!(s.similarity < 0.95))
        fail += s.label + " has a layer-1 kernel at similarity >= 0.95; ";
    }
  }
  r.passed = fail.empty();
  r.failure = fail;
  return r;
}

void write_ablation_csv(const AblationResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "setting,train_mse,activation_err,epochs,similarity\n" << std::setprecision(17);
  for (const auto& s : r.settings) {
    out << s.label << ',' << s.train_mse << ',' << s.activation_err << ','
        << s.epochs << ',' << s.similarity << '\n';
  }
}

ProbeResult probe_scaling(const Model& model, const Sample& sample, double factor) {
  if (!std::isfinite(factor)) throw ConfigError("probe_scaling: factor must be finite");
  ProbeResult r;
  r.kind = "scaling";
  r.factor = factor;
  const Encoding base = encode(model, sample.image);
  const Encoding scaled = encode(model, factor * sample.image);

  for (const Tensor3& m : scaled.maps) {
    for (double v : m.data()) {
      const double pre = std::abs(v) < 1.0 ? std::abs(std::atanh(v))
                                           : std::numeric_limits<double>::infinity();
      r.max_scaled_preactivation = std::max(r.max_scaled_preactivation, pre);
    }
  }
  if (r.max_scaled_preactivation > 0.5) {
    r.valid = false;
    r.invalid_reason = "saturated: scaled pre-activation exceeds 0.5";
  } else if (r.max_scaled_preactivation > 0.1) {
    r.valid = false;
    r.invalid_reason = "scaled pre-activation exceeds the near-linear bound 0.1";
  }

  bool ok = true;
  for (std::size_t l = 0; l < base.maps.size(); ++l) {
    const double nb = frobenius(base.maps[l]);
    const double ns = frobenius(scaled.maps[l]);
    if (nb == 0.0) {
      r.valid = false;
      r.invalid_reason = "zero baseline activation at layer " + std::to_string(l);
      r.ratios.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double ratio = ns / nb;
    r.ratios.push_back(ratio);
    ok = ok && std::abs(ratio - std::abs(factor)) <= kScalingTolerance * std::abs(factor);
  }
  r.passed = r.valid && ok;
  return r;
}

Sample perturb_row(const Sample& sample, std::size_t row, double amplitude,
                   PerturbMode mode) {
  if (row >= sample.image.rows()) throw ShapeError("perturb_row: row out of range");
  Sample out = sample;
  if (mode == PerturbMode::additive && amplitude == 0.0) return out;
  for (std::size_t t = 0; t < out.image.cols(); ++t) {
    for (std::size_t ch = 0; ch < out.image.channels(); ++ch) {
      double& v = out.image(row, t, ch);
      v = mode == PerturbMode::additive ? v + amplitude : 0.0;
    }
  }
  return out;
}

std::vector<std::size_t> flag_rows(const std::vector<double>& profile,
                                   std::size_t margin) {
  std::vector<std::size_t> flagged;
  if (profile.size() <= 2 * margin) return flagged;
  std::vector<double> interior(profile.begin() + static_cast<std::ptrdiff_t>(margin),
                               profile.end() - static_cast<std::ptrdiff_t>(margin));
  std::vector<double> sorted = interior;
  const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
  std::nth_element(sorted.begin(), mid, sorted.end());
  const double median = *mid;
  for (std::size_t i = 0; i < interior.size(); ++i) {
    if (interior[i] > 5.0 * median) flagged.push_back(i + margin);
  }
  return flagged;
}

ProbeResult probe_missing(const Model& model, const Sample& sample,
                          double amplitude, PerturbMode mode) {
  if (sample.meta.family != model.config.family) {
    throw ShapeError("probe_missing: sample family does not match model");
  }
  ProbeResult r;
  r.kind = "missing";
  r.amplitude = amplitude;
  r.mode = mode;
  r.perturbed_row = sample.image.rows() / 2;
  const std::size_t margin = zero_feature_margin(model.config);

  const Sample perturbed = perturb_row(sample, r.perturbed_row, amplitude, mode);
  r.row_profile = activation_report(model, perturbed).layers.back().row_profile;
  r.control_profile = activation_report(model, sample).layers.back().row_profile;
  r.flagged = flag_rows(r.row_profile, margin);
  r.control_flagged = flag_rows(r.control_profile, margin);

  if (!r.control_flagged.empty()) {
    r.valid = false;
    r.invalid_reason = "control sample raised flags: model not converged";
  }
  bool near = !r.flagged.empty();
  for (std::size_t row : r.flagged) {
    const auto d = static_cast<long>(row) - static_cast<long>(r.perturbed_row);
    near = near && std::abs(d) <= 2;
  }
  r.passed = r.valid && near;
  return r;
}

void write_probe_csv(const ProbeResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "key,index,value\n" << std::setprecision(17);
  out << "kind,," << r.kind << '\n';
  out << "valid,," << (r.valid ? 1 : 0) << '\n';
  if (!r.invalid_reason.empty()) out << "invalid_reason,,\"" << r.invalid_reason << "\"\n";
  out << "passed,," << (r.passed ? 1 : 0) << '\n';
  if (r.kind == "scaling") {
    out << "factor,," << r.factor << '\n';
    out << "max_scaled_preactivation,," << r.max_scaled_preactivation << '\n';
    for (std::size_t l = 0; l < r.ratios.size(); ++l)
      out << "ratio," << l << ',' << r.ratios[l] << '\n';
  } else {
    out << "perturbed_row,," << r.perturbed_row << '\n';
    out << "amplitude,," << r.amplitude << '\n';
    out << "mode,," << (r.mode == PerturbMode::additive ? "additive" : "zeroing") << '\n';
    for (std::size_t row : r.flagged) out << "flagged," << row << ",1\n";
    for (std::size_t row : r.control_flagged) out << "control_flagged," << row << ",1\n";
    for (std::size_t i = 0; i < r.row_profile.size(); ++i)
      out << "row_profile," << i << ',' << r.row_profile[i] << '\n';
    for (std::size_t i = 0; i < r.control_profile.size(); ++i)
      out << "control_profile," << i << ',' << r.control_profile[i] << '\n';
  }
}

void write_pgm(const Tensor3& map, std::size_t channel,
               const std::filesystem::path& path) {
  if (channel >= map.channels()) throw ShapeError("write_pgm: bad channel");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t r = 0; r < map.rows(); ++r)
    for (std::size_t c = 0; c < map.cols(); ++c) {
      lo = std::min(lo, map(r, c, channel));
      hi = std::max(hi, map(r, c, channel));
    }
  if (map.rows() == 0 || map.cols() == 0) lo = hi = 0.0;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "P2\n# min " << std::setprecision(17) << lo << " max " << hi << '\n'
      << map.cols() << ' ' << map.rows() << "\n65535\n";
  const double span = hi - lo;
  for (std::size_t r = 0; r < map.rows(); ++r) {
    for (std::size_t c = 0; c < map.cols(); ++c) {
      const double t = span > 0.0 ? (map(r, c, channel) - lo) / span : 0.0;
      out << (c ? " " : "") << static_cast<long>(std::lround(t * 65535.0));
    }
    out << '\n';
  }
}

std::vector<std::string> export_maps(const Model& model, const Sample& sample,
                                     const std::filesystem::path& dir,
                                     const std::string& prefix) {
  const Encoding enc = encode(model, sample.image);
  std::vector<std::string> names;
  for (std::size_t l = 0; l < enc.maps.size(); ++l) {
    for (std::size_t ch = 0; ch < enc.maps[l].channels(); ++ch) {
      names.push_back(prefix + "layer" + std::to_string(l + 1) + "_ch" +
                      std::to_string(ch) + ".pgm");
      write_pgm(enc.maps[l], ch, dir / names.back());
    }
  }
  for (std::size_t ch = 0; ch < enc.pooled.channels(); ++ch) {
    names.push_back(prefix + "pooled_ch" + std::to_string(ch) + ".pgm");
    write_pgm(enc.pooled, ch, dir / names.back());
  }
  return names;
}

}  // namespace stencilseer
