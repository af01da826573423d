#include "stencilseer/model.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "stencilseer/errors.hpp"
#include "stencilseer/ops.hpp"
#include "stencilseer/tape.hpp"
#include "stencilseer/verify.hpp"

namespace stencilseer {
namespace {

KernelLayer random_layer(std::size_t count, std::size_t cin,
                         std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  KernelLayer layer;
  layer.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Kernel2x2 ker(cin);
    for (double& w : ker.weights()) w = dist(rng);
    layer.push_back(std::move(ker));
  }
  return layer;
}

/// Input channel count of every encoder layer.
std::vector<std::size_t> encoder_inputs(const ModelConfig& cfg) {
  std::vector<std::size_t> cin;
  std::size_t c = cfg.in_channels();
  for (std::size_t l = 0; l < cfg.depth(); ++l) {
    cin.push_back(c);
    c = cfg.widths[l] + (cfg.coupling && l == 0 ? 1 : 0);
  }
  return cin;
}

/// (input channels, output channels) of every decoder layer.
std::vector<std::pair<std::size_t, std::size_t>> decoder_shape(
    const ModelConfig& cfg) {
  std::vector<std::pair<std::size_t, std::size_t>> shape;
  const std::size_t n = cfg.depth();
  std::size_t c = 2 * cfg.widths.back();
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t out = j < n ? cfg.widths[n - 1 - j] : cfg.in_channels();
    shape.emplace_back(c, out);
    c = out;
  }
  return shape;
}

struct TapeModel {
  std::vector<GradTape::Param> enc;
  std::vector<GradTape::Param> dec;
};

struct TapeForward {
  std::vector<GradTape::Var> maps;
  GradTape::Var pooled;
  std::optional<GradTape::Var> recon;
};

TapeForward record_forward(GradTape& tape, const TapeModel& tm,
                           const ModelConfig& cfg, GradTape::Var image) {
  TapeForward f;
  GradTape::Var h = image;
  for (std::size_t l = 0; l < tm.enc.size(); ++l) {
    h = tape.conv2d_valid(h, tm.enc[l]);
    if (cfg.coupling && l == 0) {
      const auto prod = tape.channel_product(tape.select_channel(h, 0),
                                             tape.select_channel(h, 1));
      h = tape.concat_channels(h, prod);
    }
    h = tape.tanh(h);
    f.maps.push_back(h);
  }
  f.pooled = tape.avg_pool_halves(h);
  if (cfg.decoder) {
    const std::size_t rows = tape.value(h).rows();
    GradTape::Var d =
        tape.concat_channels(tape.replicate_halves(f.pooled, rows), h);
    for (std::size_t j = 0; j < tm.dec.size(); ++j) {
      d = tape.transpose_conv2d(d, tm.dec[j]);
      if (j + 1 < tm.dec.size()) d = tape.tanh(d);
    }
    f.recon = d;
  }
  return f;
}

struct TapeLoss {
  GradTape::Var total;
  LossComponents parts;
};

TapeLoss record_loss(GradTape& tape, const TapeModel& tm, const Model& model,
                     const Sample& sample, double label_scale) {
  const ModelConfig& cfg = model.config;
  const auto image = tape.constant(sample.image);
  const TapeForward f = record_forward(tape, tm, cfg, image);
  const Tensor3 labels = crop_labels(sample.boundary, cfg.depth());

  TapeLoss out;
  const auto mse = tape.mse(f.pooled, labels);
  out.parts.boundary_mse = tape.scalar(mse);
  GradTape::Var data = tape.scale(mse, label_scale);
  out.parts.boundary = tape.scalar(data);

  if (f.recon && cfg.lambda_rec > 0.0) {
    const auto rec =
        tape.scale(tape.mse(*f.recon, sample.image), label_scale * cfg.lambda_rec);
    out.parts.reconstruction = tape.scalar(rec);
    data = tape.add(data, rec);
  }
  if (cfg.lambda_zf > 0.0) {
    const auto zf =
        tape.scale(tape.interior_mean_square(f.maps.back(),
                                             zero_feature_margin(cfg)),
                   label_scale * cfg.lambda_zf);
    out.parts.zero_feature = tape.scalar(zf);
    data = tape.add(data, zf);
  }
  std::vector<GradTape::Param> all = tm.enc;
  all.insert(all.end(), tm.dec.begin(), tm.dec.end());
  const auto zs = tape.zero_sum_penalty(all, cfg.lambda_zs);
  out.parts.zero_sum = tape.scalar(zs);
  out.total = tape.add(data, zs);
  out.parts.total = out.parts.boundary + out.parts.reconstruction +
                    out.parts.zero_feature + out.parts.zero_sum;
  return out;
}

TapeModel register_params(GradTape& tape, const Model& model) {
  TapeModel tm;
  for (const auto& layer : model.encoder) tm.enc.push_back(tape.parameter(layer));
  for (const auto& layer : model.decoder) tm.dec.push_back(tape.parameter(layer));
  return tm;
}

double label_power(const Dataset& ds, const std::vector<std::size_t>& idx,
                   std::size_t depth) {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i : idx) {
    const Tensor3 lab = crop_labels(ds.samples[i].boundary, depth);
    for (double v : lab.data()) acc += v * v;
    n += lab.size();
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

}  // namespace

void ModelConfig::validate() const {
  if (widths.empty()) throw ConfigError("ModelConfig: depth must be >= 1");
  for (std::size_t k : widths) {
    if (k == 0) throw ConfigError("ModelConfig: widths must be >= 1");
  }
  if (coupling) {
    if (in_channels() < 2) {
      throw ConfigError("ModelConfig: coupling needs >= 2 input channels");
    }
    if (depth() < 2) throw ConfigError("ModelConfig: coupling needs depth >= 2");
    if (widths[0] < 2) {
      throw ConfigError("ModelConfig: coupling needs K1 >= 2 channels to multiply");
    }
  }
  if (out_channels() != in_channels()) {
    throw ConfigError("ModelConfig: last width must equal the label channel count (" +
                      std::to_string(in_channels()) + ")");
  }
  if (lambda_zs < 0.0 || lambda_rec < 0.0 || lambda_zf < 0.0) {
    throw ConfigError("ModelConfig: loss weights must be >= 0");
  }
}

ModelConfig ModelConfig::defaults(Family family) {
  ModelConfig cfg;
  cfg.family = family;
  switch (family) {
    case Family::hyperbolic:
      cfg.widths = {1};
      break;
    case Family::elliptic:
      cfg.widths = {1, 1};
      cfg.lambda_zf = 1.0;
      break;
    case Family::parabolic:
      cfg.widths = {2, 1};
      cfg.lambda_zf = 1.0;
      break;
    case Family::coupled:
      cfg.widths = {2, 2};
      cfg.coupling = true;
      break;
  }
  return cfg;
}

std::size_t encoder_parameter_count(const ModelConfig& cfg) {
  const auto cin = encoder_inputs(cfg);
  std::size_t n = 0;
  for (std::size_t l = 0; l < cfg.depth(); ++l) n += 4 * cin[l] * cfg.widths[l];
  return n;
}

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.config = cfg;
  std::mt19937_64 rng(sample_seed(seed, 0xC0DE));
  const auto cin = encoder_inputs(cfg);
  for (std::size_t l = 0; l < cfg.depth(); ++l) {
    m.encoder.push_back(random_layer(cfg.widths[l], cin[l], rng));
  }
  if (cfg.decoder) {
    for (const auto& [in, out] : decoder_shape(cfg)) {
      m.decoder.push_back(random_layer(out, in, rng));
    }
  }
  return m;
}

Encoding encode(const Model& model, const Tensor3& image) {
  const ModelConfig& cfg = model.config;
  if (image.channels() != cfg.in_channels()) {
    throw ShapeError("encode: image has " + std::to_string(image.channels()) +
                     " channels, model expects " +
                     std::to_string(cfg.in_channels()));
  }
  Encoding enc;
  Tensor3 h = image;
  for (std::size_t l = 0; l < model.encoder.size(); ++l) {
    h = ops::conv2d_valid(h, model.encoder[l]);
    if (cfg.coupling && l == 0) {
      h = ops::concat_channels(h, ops::channel_product(h.channel(0), h.channel(1)));
    }
    h = ops::tanh_map(h);
    enc.maps.push_back(h);
  }
  enc.pooled = ops::avg_pool_halves(h);
  return enc;
}

Tensor3 decode(const Model& model, const Encoding& enc) {
  if (!model.config.decoder || model.decoder.empty()) {
    throw UsageError("decode: model has no decoder");
  }
  if (enc.maps.empty() || enc.pooled.empty()) {
    throw UsageError("decode: missing encoder skip maps");
  }
  const Tensor3& skip = enc.maps.back();
  Tensor3 d = ops::concat_channels(ops::replicate_halves(enc.pooled, skip.rows()),
                                   skip);
  for (std::size_t j = 0; j < model.decoder.size(); ++j) {
    d = ops::transpose_conv2d(d, model.decoder[j]);
    if (j + 1 < model.decoder.size()) d = ops::tanh_map(d);
  }
  return d;
}

Tensor3 crop_labels(const Tensor3& boundary, std::size_t depth) {
  if (boundary.cols() <= depth) {
    throw ShapeError("crop_labels: labels shorter than the model depth");
  }
  Tensor3 out(boundary.rows(), boundary.cols() - depth, boundary.channels());
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      for (std::size_t ch = 0; ch < out.channels(); ++ch)
        out(r, c, ch) = boundary(r, c + depth, ch);
  return out;
}

std::size_t zero_feature_margin(const ModelConfig& cfg) { return cfg.depth() + 2; }

LossComponents total_loss(const Model& model, const Sample& sample,
                          double label_scale) {
  GradTape tape;
  const TapeModel tm = register_params(tape, model);
  return record_loss(tape, tm, model, sample, label_scale).parts;
}

LossGradient loss_gradient(const Model& model, const Sample& sample,
                           double label_scale) {
  GradTape tape;
  const TapeModel tm = register_params(tape, model);
  const TapeLoss tl = record_loss(tape, tm, model, sample, label_scale);
  const auto grads = tape.backward(tl.total);
  LossGradient out;
  out.loss = tl.parts;
  out.gradient.reserve(parameter_count(model.encoder) +
                       parameter_count(model.decoder));
  for (const auto& layer : grads.params)
    for (const auto& k : layer)
      out.gradient.insert(out.gradient.end(), k.weights().begin(),
                          k.weights().end());
  return out;
}

std::vector<double> model_parameters(const Model& model) {
  auto p = flatten(model.encoder);
  const auto d = flatten(model.decoder);
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

void set_model_parameters(Model& model, std::span<const double> values) {
  const std::size_t ne = parameter_count(model.encoder);
  if (values.size() != ne + parameter_count(model.decoder)) {
    throw ShapeError("set_model_parameters: parameter count mismatch");
  }
  unflatten(values.first(ne), model.encoder);
  unflatten(values.subspan(ne), model.decoder);
}

double TrainReport::final_val_mse() const {
  return history.empty() ? std::numeric_limits<double>::quiet_NaN()
                         : history.back().val_mse;
}

double TrainReport::final_train_mse() const {
  return history.empty() ? std::numeric_limits<double>::quiet_NaN()
                         : history.back().train_mse;
}

double mean_boundary_mse(const Model& model, const Dataset& ds,
                         const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i : indices) {
    const Sample& s = ds.samples[i];
    acc += ops::mse(encode(model, s.image).pooled,
                    crop_labels(s.boundary, model.config.depth()));
  }
  return acc / static_cast<double>(indices.size());
}

TrainReport train(Model& model, const Dataset& ds, const TrainOptions& opts) {
  if (ds.family != model.config.family) {
    throw ConfigError("train: dataset family " +
                      std::string(family_name(ds.family)) +
                      " does not match model family " +
                      std::string(family_name(model.config.family)));
  }
  if (ds.train.empty()) throw ConfigError("train: empty training split");
  const auto t0 = std::chrono::steady_clock::now();

  double scale = 1.0;
  if (opts.normalize_loss) {
    const double power = label_power(ds, ds.train, model.config.depth());
    if (power > 0.0) scale = 1.0 / power;
  }

  TrainReport report;
  report.steps_per_epoch = opts.steps_per_epoch;
  std::vector<double> params = model_parameters(model);
  AdaDeltaState opt(params.size(), opts.optimizer);
  std::mt19937_64 rng(sample_seed(opts.seed, 0x57E9));
  std::vector<std::size_t> order = ds.train;
  std::size_t cursor = order.size();
  double best = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    double reg = 0.0;
    for (std::size_t step = 0; step < opts.steps_per_epoch; ++step) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
        }
        cursor = 0;
      }
      const Sample& s = ds.samples[order[cursor++]];
      LossGradient lg = loss_gradient(model, s, scale);
      bool finite = std::isfinite(lg.loss.total);
      for (double g : lg.gradient) finite = finite && std::isfinite(g);
      if (!finite) {
        report.diverged = true;
        report.stop_reason = "diverged";
        break;
      }
      reg = lg.loss.zero_sum;
      opt.step(params, lg.gradient);
      set_model_parameters(model, params);
    }
    if (report.diverged) break;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = mean_boundary_mse(model, ds, ds.train);
    rec.val_mse = mean_boundary_mse(model, ds, ds.val.empty() ? ds.train : ds.val);
    rec.regularizer = reg;
    if (!std::isfinite(rec.train_mse) || !std::isfinite(rec.val_mse)) {
      report.diverged = true;
      report.stop_reason = "diverged";
      break;
    }
    best = std::min(best, rec.val_mse);
    rec.best_val_mse = best;
    report.history.push_back(rec);
    report.epochs_run = epoch + 1;
    if (opts.on_epoch && !opts.on_epoch(epoch, rec.train_mse, rec.val_mse)) {
      report.stop_reason = "callback";
      break;
    }
    if (rec.val_mse * scale < opts.stop_threshold) {
      report.stop_reason = "threshold";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "epochs";
  report.final_encoder = model.encoder;
  report.final_decoder = model.decoder;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

void init_from_stencils(Model& model, const GenConfig& scheme) {
  const ModelConfig& cfg = model.config;
  if (scheme.family != cfg.family) {
    throw ConfigError("init_from_stencils: scheme family does not match model");
  }
  const AnalyticStencil as = analytic_stencil(cfg.family, scheme, cfg.depth());
  if (!as.factors) {
    throw ConfigError("init_from_stencils: no analytic factorization for " +
                      std::string(family_name(cfg.family)) + " at depth " +
                      std::to_string(cfg.depth()));
  }
  const KernelStack& f = *as.factors;
  if (f.size() != model.encoder.size()) {
    throw ConfigError("init_from_stencils: factor depth does not match model");
  }
  for (std::size_t l = 0; l < f.size(); ++l) {
    if (f[l].size() != model.encoder[l].size() ||
        f[l].front().in_channels() != model.encoder[l].front().in_channels()) {
      throw ConfigError("init_from_stencils: widths do not match the analytic factors");
    }
  }
  model.encoder = f;
  const std::size_t window = ops::first_half_rows(scheme.W - cfg.depth());
  const double s = static_cast<double>(window) / as.source_gain;
  for (auto& k : model.encoder.back())
    for (double& w : k.weights()) w *= s;
}

void write_weights(const Model& model, const std::filesystem::path& path) {
  const ModelConfig& cfg = model.config;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "stencilseer-weights v1 " << family_name(cfg.family)
      << " depth=" << cfg.depth() << " widths=";
  for (std::size_t l = 0; l < cfg.widths.size(); ++l) {
    out << (l ? "," : "") << cfg.widths[l];
  }
  out << " coupling=" << (cfg.coupling ? 1 : 0);
  if (cfg.decoder) out << " decoder=1";
  out << '\n' << std::setprecision(17);
  auto dump = [&](const KernelStack& stack, std::size_t offset) {
    for (std::size_t l = 0; l < stack.size(); ++l) {
      for (std::size_t k = 0; k < stack[l].size(); ++k) {
        const Kernel2x2& ker = stack[l][k];
        for (std::size_t ch = 0; ch < ker.in_channels(); ++ch) {
          out << "layer=" << l + offset << " k=" << k << " ch=" << ch << ' '
              << ker(0, 0, ch) << ' ' << ker(0, 1, ch) << ' ' << ker(1, 0, ch)
              << ' ' << ker(1, 1, ch) << '\n';
        }
      }
    }
  };
  dump(model.encoder, 0);
  dump(model.decoder, model.encoder.size());
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Model read_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open weights " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty weights file");
  std::istringstream hs(line);
  std::string magic, version, fam;
  hs >> magic >> version >> fam;
  if (magic != "stencilseer-weights" || version != "v1") {
    throw FormatError("not a stencilseer-weights v1 file");
  }
  ModelConfig cfg;
  cfg.family = parse_family(fam);
  std::size_t depth = 0;
  std::string tok;
  while (hs >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw FormatError("bad header token " + tok);
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "depth") {
      depth = std::stoul(val);
    } else if (key == "widths") {
      cfg.widths.clear();
      std::istringstream ws(val);
      std::string w;
      while (std::getline(ws, w, ',')) cfg.widths.push_back(std::stoul(w));
    } else if (key == "coupling") {
      cfg.coupling = val == "1";
    } else if (key == "decoder") {
      cfg.decoder = val == "1";
    } else {
      throw FormatError("unknown header key " + key);
    }
  }
  if (depth != cfg.widths.size()) throw FormatError("depth/widths disagree");
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("weights header: ") + e.what());
  }
  Model m = build_model(cfg, 0);
  std::vector<Kernel2x2*> slots;
  auto count = [&](KernelStack& st) {
    for (auto& layer : st)
      for (auto& k : layer) slots.push_back(&k);
  };
  count(m.encoder);
  count(m.decoder);
  std::vector<std::vector<bool>> seen(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i)
    seen[i].assign(slots[i]->in_channels(), false);

  auto slot_index = [&](std::size_t layer, std::size_t k) -> std::size_t {
    std::size_t idx = 0;
    std::size_t l = 0;
    for (const KernelStack* st : {&m.encoder, &m.decoder}) {
      for (const auto& lay : *st) {
        if (l == layer) {
          if (k >= lay.size()) throw FormatError("kernel index out of range");
          return idx + k;
        }
        idx += lay.size();
        ++l;
      }
    }
    throw FormatError("layer index out of range");
  };

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tl, tk, tc;
    ls >> tl >> tk >> tc;
    if (tl.rfind("layer=", 0) != 0 || tk.rfind("k=", 0) != 0 ||
        tc.rfind("ch=", 0) != 0) {
      throw FormatError("bad weights line: " + line);
    }
    const std::size_t layer = std::stoul(tl.substr(6));
    const std::size_t k = std::stoul(tk.substr(2));
    const std::size_t ch = std::stoul(tc.substr(3));
    const std::size_t idx = slot_index(layer, k);
    Kernel2x2& ker = *slots[idx];
    if (ch >= ker.in_channels()) throw FormatError("channel index out of range");
    std::string v[4];
    ls >> v[0] >> v[1] >> v[2] >> v[3];
    if (!ls) throw FormatError("weights line needs 4 values: " + line);
    ker(0, 0, ch) = std::stod(v[0]);
    ker(0, 1, ch) = std::stod(v[1]);
    ker(1, 0, ch) = std::stod(v[2]);
    ker(1, 1, ch) = std::stod(v[3]);
    seen[idx][ch] = true;
  }
  for (const auto& s : seen)
    for (bool b : s)
      if (!b) throw FormatError("weights file is missing kernels");
  return m;
}

void write_train_report_csv(const TrainReport& report,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "epoch,train_mse,val_mse,regularizer,best_val_mse\n"
      << std::setprecision(17);
  for (const auto& r : report.history) {
    out << r.epoch << ',' << r.train_mse << ',' << r.val_mse << ','
        << r.regularizer << ',' << r.best_val_mse << '\n';
  }
}

}  // namespace stencilseer
