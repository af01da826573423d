#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "stencilseer/errors.hpp"
#include "stencilseer/model.hpp"
#include "stencilseer/ops.hpp"
#include "stencilseer/verify.hpp"
#include "support.hpp"

using namespace stencilseer;
using test_support::max_relative_error;
using test_support::numeric_gradient;
using test_support::random_tensor;
namespace fs = std::filesystem;

namespace {

ModelConfig model_cfg(Family f, std::vector<std::size_t> widths, bool coupling = false) {
  ModelConfig m;
  m.family = f;
  m.widths = std::move(widths);
  m.coupling = coupling;
  return m;
}

GenConfig gen_cfg(Family f, std::size_t W = 50, std::size_t H = 50, std::size_t n = 11) {
  GenConfig g;
  g.family = f;
  g.W = W;
  g.H = H;
  g.n_samples = n;
  return g;
}

Sample random_sample(std::size_t W, std::size_t H, std::size_t C, std::uint64_t seed,
                     Family f, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  Sample s;
  s.image = random_tensor(W, H, C, rng, scale);
  s.boundary = random_tensor(2, H, C, rng, scale);
  s.meta.family = f;
  return s;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parameter counts match the architecture table") {
  CHECK(build_model(model_cfg(Family::hyperbolic, {1}), 0).encoder_parameters() == 4);
  CHECK(build_model(model_cfg(Family::elliptic, {1, 1}), 0).encoder_parameters() == 8);
  CHECK(build_model(model_cfg(Family::coupled, {2, 2}, true), 0).encoder_parameters() == 40);
  for (std::size_t k1 = 1; k1 <= 4; ++k1) {
    CHECK(encoder_parameter_count(model_cfg(Family::elliptic, {k1})) == 4 * k1);
    for (std::size_t k2 = 1; k2 <= 4; ++k2) {
      const auto iso = model_cfg(Family::elliptic, {k1, k2});
      CHECK(encoder_parameter_count(iso) == 4 * k1 + 4 * k1 * k2);
      if (k2 == 1) CHECK(build_model(iso, 1).encoder_parameters() == 4 * k1 + 4 * k1 * k2);
      if (k1 >= 2) {
        const auto cpl = model_cfg(Family::coupled, {k1, k2}, true);
        CHECK(encoder_parameter_count(cpl) == 8 * k1 + 4 * (k1 + 1) * k2);
        if (k2 == 2) CHECK(build_model(cpl, 1).encoder_parameters() == 8 * k1 + 4 * (k1 + 1) * k2);
      }
    }
  }
}

TEST_CASE("family defaults") {
  CHECK(ModelConfig::defaults(Family::hyperbolic).widths == std::vector<std::size_t>{1});
  CHECK(ModelConfig::defaults(Family::elliptic).widths == std::vector<std::size_t>{1, 1});
  const auto c = ModelConfig::defaults(Family::coupled);
  CHECK(c.widths == std::vector<std::size_t>{2, 2});
  CHECK(c.coupling);
}

TEST_CASE("invalid configurations are rejected") {
  CHECK_THROWS_AS(build_model(model_cfg(Family::elliptic, {1, 1}, true), 0), ConfigError);
  CHECK_THROWS_AS(build_model(model_cfg(Family::coupled, {2}, true), 0), ConfigError);
  CHECK_THROWS_AS(build_model(model_cfg(Family::elliptic, {}), 0), ConfigError);
  CHECK_THROWS_AS(build_model(model_cfg(Family::elliptic, {0, 1}), 0), ConfigError);
}

TEST_CASE("seeded initialization is uniform in [-0.5, 0.5] and deterministic") {
  const auto cfg = model_cfg(Family::coupled, {3, 2}, true);
  const Model a = build_model(cfg, 7), b = build_model(cfg, 7), c = build_model(cfg, 8);
  CHECK(a.encoder == b.encoder);
  CHECK_FALSE(a.encoder == c.encoder);
  for (double w : flatten(a.encoder)) {
    CHECK(w >= -0.5);
    CHECK(w <= 0.5);
  }
}

TEST_CASE("encode shapes follow the table and zero maps to zero") {
  const Model m = build_model(model_cfg(Family::elliptic, {1, 1}), 3);
  const Encoding e = encode(m, Tensor3(50, 50, 1));
  REQUIRE(e.maps.size() == 2);
  CHECK(e.maps[0].rows() == 49);
  CHECK(e.maps[0].cols() == 49);
  CHECK(e.maps[1].rows() == 48);
  CHECK(e.maps[1].cols() == 48);
  CHECK(e.pooled.rows() == 2);
  CHECK(e.pooled.cols() == 48);
  CHECK(e.pooled.channels() == 1);
  for (const auto& map : e.maps) CHECK(map.max_abs() == 0.0);
  CHECK(e.pooled.max_abs() == 0.0);

  const Model cm = build_model(model_cfg(Family::coupled, {2, 2}, true), 3);
  const Encoding ce = encode(cm, Tensor3(50, 50, 2));
  CHECK(ce.maps[0].channels() == 3);
  CHECK(ce.pooled.channels() == 2);
  CHECK(ce.pooled.max_abs() == 0.0);
  CHECK_THROWS_AS(encode(cm, Tensor3(50, 50, 1)), ShapeError);
}

TEST_CASE("coupling appends the product of layer-1 channels before tanh") {
  ModelConfig cfg = model_cfg(Family::coupled, {2, 2}, true);
  Model m = build_model(cfg, 2);
  std::mt19937_64 rng(4);
  const Tensor3 x = random_tensor(6, 5, 2, rng, 0.5);
  const Tensor3 pre = ops::conv2d_valid(x, m.encoder[0]);
  const Encoding e = encode(m, x);
  for (std::size_t r = 0; r < pre.rows(); ++r)
    for (std::size_t c = 0; c < pre.cols(); ++c)
      CHECK(e.maps[0](r, c, 2) == doctest::Approx(std::tanh(pre(r, c, 0) * pre(r, c, 1))).epsilon(1e-14));
}

TEST_CASE("decoder restores the input shape and maps zero to zero") {
  for (Family f : {Family::hyperbolic, Family::elliptic, Family::coupled}) {
    ModelConfig cfg = ModelConfig::defaults(f);
    cfg.decoder = true;
    cfg.lambda_rec = 1.0;
    const Model m = build_model(cfg, 5);
    const std::size_t C = family_channels(f);
    std::mt19937_64 rng(1);
    const Tensor3 rec = decode(m, encode(m, random_tensor(20, 16, C, rng, 1e-3)));
    CHECK(rec.rows() == 20);
    CHECK(rec.cols() == 16);
    CHECK(rec.channels() == C);
    CHECK(decode(m, encode(m, Tensor3(20, 16, C))).max_abs() == 0.0);
  }
}

TEST_CASE("labels drop the first n time columns") {
  Tensor3 b(2, 6, 1);
  for (std::size_t t = 0; t < 6; ++t) b(0, t) = static_cast<double>(t);
  const Tensor3 c = crop_labels(b, 2);
  CHECK(c.cols() == 4);
  CHECK(c(0, 0) == 2.0);
  CHECK(c(0, 3) == 5.0);
}

TEST_CASE("loss components") {
  SUBCASE("zero model on a zero sample") {
    ModelConfig cfg = ModelConfig::defaults(Family::elliptic);
    Model m = build_model(cfg, 0);
    for (auto& l : m.encoder)
      for (auto& k : l)
        for (double& w : k.weights()) w = 0.0;
    Sample s;
    s.image = Tensor3(20, 20, 1);
    s.boundary = Tensor3(2, 20, 1);
    s.meta.family = Family::elliptic;
    CHECK(total_loss(m, s).total == 0.0);
  }
  SUBCASE("zero-sum violation adds exactly lambda * sum^2") {
    ModelConfig cfg = model_cfg(Family::elliptic, {1, 1});
    cfg.lambda_zs = 0.01;
    Model m = build_model(cfg, 0);
    m.encoder[0][0] = Kernel2x2::single(1, 1, 1, 1);
    m.encoder[1][0] = Kernel2x2::single(0.5, 0, 0, 0);
    Sample s;
    s.image = Tensor3(20, 20, 1);
    s.boundary = Tensor3(2, 20, 1);
    s.meta.family = Family::elliptic;
    const auto l = total_loss(m, s);
    CHECK(l.zero_sum == doctest::Approx(0.01 * (16 + 0.25)).epsilon(1e-15));
    CHECK(l.total == l.zero_sum);
  }
  SUBCASE("total is the exact sum of weighted parts") {
    ModelConfig cfg = ModelConfig::defaults(Family::coupled);
    cfg.decoder = true;
    cfg.lambda_rec = 0.5;
    cfg.lambda_zf = 0.25;
    const Model m = build_model(cfg, 4);
    const Sample s = random_sample(12, 10, 2, 3, Family::coupled);
    const auto l = total_loss(m, s, 3.0);
    CHECK(l.total == l.boundary + l.reconstruction + l.zero_feature + l.zero_sum);
    CHECK(l.boundary == doctest::Approx(3.0 * l.boundary_mse));
  }
}

TEST_CASE("full coupled model with decoder passes the finite-difference check") {
  ModelConfig cfg = ModelConfig::defaults(Family::coupled);
  cfg.decoder = true;
  cfg.lambda_rec = 0.7;
  cfg.lambda_zf = 0.3;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Model m = build_model(cfg, seed);
    const Sample s = random_sample(9, 7, 2, seed + 1000, Family::coupled);
    const LossGradient lg = loss_gradient(m, s, 2.0);
    auto f = [&](const std::vector<double>& p) {
      Model q = m;
      set_model_parameters(q, p);
      return total_loss(q, s, 2.0).total;
    };
    worst = std::max(worst, max_relative_error(lg.gradient, numeric_gradient(f, model_parameters(m))));
    CHECK(lg.loss.total == total_loss(m, s, 2.0).total);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("isolated models pass the finite-difference check") {
  for (Family f : {Family::hyperbolic, Family::elliptic, Family::parabolic}) {
    ModelConfig cfg = ModelConfig::defaults(f);
    cfg.lambda_zf = 0.5;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const Model m = build_model(cfg, seed);
      const Sample s = random_sample(10, 8, 1, seed + 7, f);
      auto fn = [&](const std::vector<double>& p) {
        Model q = m;
        set_model_parameters(q, p);
        return total_loss(q, s).total;
      };
      worst = std::max(worst, max_relative_error(loss_gradient(m, s).gradient,
                                                 numeric_gradient(fn, model_parameters(m))));
    }
    CAPTURE(family_name(f));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("stencil-initialized models sit at the ground-truth optimum") {
  SUBCASE("hyperbolic depth 1") {
    const GenConfig g = gen_cfg(Family::hyperbolic);
    Model m = build_model(ModelConfig::defaults(Family::hyperbolic), 0);
    init_from_stencils(m, g);
    // Pool window (25 of the 49 output rows) times the upwind annihilator.
    const double s = 25.0;
    const Kernel2x2& k = m.encoder[0][0];
    CHECK(k(0, 0) == doctest::Approx(-0.5 * s));
    CHECK(k(0, 1) == 0.0);
    CHECK(k(1, 0) == doctest::Approx(-0.5 * s));
    CHECK(k(1, 1) == doctest::Approx(s));
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Sample smp = generate(g, random_sources(g, seed));
      CHECK(total_loss(m, smp).boundary_mse <= 1e-12);
      CHECK(activation_report(m, smp).zero_feature_max_abs() <= 1e-10);
    }
  }
  SUBCASE("elliptic depth 2") {
    const GenConfig g = gen_cfg(Family::elliptic);
    Model m = build_model(ModelConfig::defaults(Family::elliptic), 0);
    init_from_stencils(m, g);
    CHECK(oriented_similarity(compose_stack(m.encoder),
                              make_stencil({{0, 0, -1}, {0, 0, 2}, {0, 0, -1}})) ==
          doctest::Approx(1.0).epsilon(1e-14));
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Sample smp = generate(g, random_sources(g, seed));
      CHECK(total_loss(m, smp).boundary_mse <= 1e-12);
    }
  }
  SUBCASE("parabolic (2,1)") {
    const GenConfig g = gen_cfg(Family::parabolic);
    Model m = build_model(ModelConfig::defaults(Family::parabolic), 0);
    init_from_stencils(m, g);
    const Sample smp = generate(g, random_sources(g, 1));
    CHECK(total_loss(m, smp).boundary_mse <= 1e-12);
  }
  SUBCASE("unsupported combinations") {
    Model m = build_model(model_cfg(Family::elliptic, {1}), 0);
    CHECK_THROWS_AS(init_from_stencils(m, gen_cfg(Family::elliptic)), ConfigError);
    Model c = build_model(ModelConfig::defaults(Family::coupled), 0);
    CHECK_THROWS_AS(init_from_stencils(c, gen_cfg(Family::coupled)), ConfigError);
  }
}

TEST_CASE("training from the stencil optimum does not move the kernels") {
  const GenConfig g = gen_cfg(Family::hyperbolic, 50, 50, 10);
  const Dataset ds = make_dataset(g);
  Model m = build_model(ModelConfig::defaults(Family::hyperbolic), 0);
  init_from_stencils(m, g);
  const auto before = flatten(m.encoder);
  TrainOptions opts;
  opts.epochs = 5;
  opts.steps_per_epoch = 200;
  opts.stop_threshold = 0.0;
  const TrainReport rep = train(m, ds, opts);
  CHECK(rep.epochs_run == 5);
  const auto after = flatten(m.encoder);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(std::abs(after[i] - before[i]) <= 1e-3);
}

TEST_CASE("training is seed-deterministic and records every epoch") {
  const GenConfig g = gen_cfg(Family::elliptic, 16, 12, 10);
  const Dataset ds = make_dataset(g);
  TrainOptions opts;
  opts.epochs = 4;
  opts.steps_per_epoch = 30;
  opts.seed = 3;
  Model a = build_model(ModelConfig::defaults(Family::elliptic), 3);
  Model b = a;
  const TrainReport ra = train(a, ds, opts), rb = train(b, ds, opts);
  REQUIRE(ra.history.size() == 4);
  CHECK(ra.epochs_run == 4);
  CHECK(ra.steps_per_epoch == 30);
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(ra.history[e].train_mse == rb.history[e].train_mse);
    CHECK(ra.history[e].val_mse == rb.history[e].val_mse);
    CHECK(std::isfinite(ra.history[e].val_mse));
    if (e > 0) CHECK(ra.history[e].best_val_mse <= ra.history[e - 1].best_val_mse);
  }
  CHECK(a.encoder == b.encoder);
  CHECK(ra.final_encoder == a.encoder);
}

TEST_CASE("training stops early on the threshold and on the callback") {
  const GenConfig g = gen_cfg(Family::hyperbolic, 20, 20, 10);
  const Dataset ds = make_dataset(g);
  Model m = build_model(ModelConfig::defaults(Family::hyperbolic), 0);
  init_from_stencils(m, g);
  TrainOptions opts;
  opts.epochs = 10;
  opts.steps_per_epoch = 5;
  const TrainReport rep = train(m, ds, opts);
  CHECK(rep.epochs_run == 1);

  Model r = build_model(ModelConfig::defaults(Family::hyperbolic), 0);
  opts.on_epoch = [](std::size_t e, double, double) { return e < 1; };
  CHECK(train(r, ds, opts).epochs_run == 2);
}

TEST_CASE("a non-finite loss aborts with a diverged report") {
  const GenConfig g = gen_cfg(Family::elliptic, 12, 12, 5);
  Dataset ds = make_dataset(g);
  for (auto& s : ds.samples) s.image(5, 5) = std::nan("");
  Model m = build_model(ModelConfig::defaults(Family::elliptic), 0);
  TrainOptions opts;
  opts.epochs = 3;
  opts.steps_per_epoch = 5;
  TrainReport rep;
  try {
    rep = train(m, ds, opts);
  } catch (const DivergenceError&) {
    rep.diverged = true;
  }
  CHECK(rep.diverged);
}

TEST_CASE("weights round-trip bit-exactly") {
  const fs::path dir = fs::temp_directory_path() / "stencilseer_test_weights";
  fs::create_directories(dir);
  ModelConfig cfg = ModelConfig::defaults(Family::coupled);
  cfg.decoder = true;
  const Model m = build_model(cfg, 9);
  write_weights(m, dir / "w.txt");
  const Model back = read_weights(dir / "w.txt");
  CHECK(back.encoder == m.encoder);
  CHECK(back.decoder == m.decoder);
  CHECK(back.config.widths == m.config.widths);
  CHECK(back.config.coupling);
  std::ifstream in(dir / "w.txt");
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("stencilseer-weights v1 coupled depth=2 widths=2,2 coupling=1", 0) == 0);

  std::ofstream(dir / "bad.txt") << "not-weights\n";
  CHECK_THROWS_AS(read_weights(dir / "bad.txt"), FormatError);
  fs::remove_all(dir);
}

}  // TEST_SUITE
