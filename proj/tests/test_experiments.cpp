#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stencilseer/experiments.hpp"
#include "stencilseer/verify.hpp"

using namespace stencilseer;
namespace fs = std::filesystem;

namespace {

GenConfig gen_cfg(Family f, std::size_t n = 10) {
  GenConfig g;
  g.family = f;
  g.n_samples = n;
  return g;
}

Model optimum(Family f) {
  Model m = build_model(ModelConfig::defaults(f), 0);
  init_from_stencils(m, gen_cfg(f));
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("experiments") {

TEST_CASE("placement similarity finds a shifted copy") {
  const Stencil truth = make_stencil({{-1}, {2}, {-1}});
  const Stencil learned = make_stencil({{0, 0, -3}, {0, 0, 6}, {0, 0, -3}});
  CHECK(placement_similarity(learned, truth) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(placement_similarity(transpose(learned), truth) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(placement_similarity(make_stencil({{1, 0}, {0, 0}}), truth) < 0.9);
}

TEST_CASE("scaling probe on the elliptic optimum is linear to 1e-4") {
  const GenConfig g = gen_cfg(Family::elliptic);
  Sample s = generate(g, random_sources(g, 3));
  const Model m = optimum(Family::elliptic);

  SUBCASE("factor 1000 within the near-linear regime") {
    s.image = 1e-3 * s.image;
    const ProbeResult r = probe_scaling(m, s, 1000.0);
    CHECK(r.valid);
    CHECK(r.passed);
    REQUIRE(r.ratios.size() == 2);
    for (double x : r.ratios) {
      CHECK(x >= 999.9);
      CHECK(x <= 1000.1);
    }
    CHECK(r.max_scaled_preactivation <= 0.1);
  }
  SUBCASE("factor 1 gives ratio exactly 1") {
    const ProbeResult r = probe_scaling(m, s, 1.0);
    for (double x : r.ratios) CHECK(x == 1.0);
    CHECK(r.passed);
  }
  SUBCASE("factor 0 gives zero activations") {
    const ProbeResult r = probe_scaling(m, s, 0.0);
    for (double x : r.ratios) CHECK(x == 0.0);
    Sample z = s;
    z.image = 0.0 * s.image;
    for (const auto& map : encode(m, z.image).maps) CHECK(map.max_abs() == 0.0);
  }
  SUBCASE("saturating the activations invalidates the probe") {
    const ProbeResult r = probe_scaling(m, s, 1e6);
    CHECK_FALSE(r.valid);
    CHECK_FALSE(r.passed);
    CHECK(r.invalid_reason.find("saturated") != std::string::npos);
  }
}

TEST_CASE("perturb_row") {
  const GenConfig g = gen_cfg(Family::parabolic);
  const Sample s = generate(g, random_sources(g, 1));
  CHECK(perturb_row(s, 25, 0.0) == s);
  const Sample a = perturb_row(s, 25, 1e-3);
  const Sample z = perturb_row(s, 25, 0.0, PerturbMode::zeroing);
  for (std::size_t t = 0; t < 50; ++t) {
    CHECK(a.image(25, t) == s.image(25, t) + 1e-3);
    CHECK(a.image(24, t) == s.image(24, t));
    CHECK(z.image(25, t) == 0.0);
  }
}

TEST_CASE("flag_rows uses five times the interior median") {
  std::vector<double> profile(20, 1.0);
  profile[0] = 100.0;
  profile[10] = 5.5;
  profile[11] = 4.9;
  const auto f = flag_rows(profile, 3);
  REQUIRE(f.size() == 1);
  CHECK(f[0] == 10);
  CHECK(flag_rows(std::vector<double>(20, 1.0), 3).empty());
  CHECK(flag_rows(std::vector<double>(4, 1.0), 3).empty());
}

TEST_CASE("missing-data probe localizes a perturbed row on the hyperbolic optimum") {
  const GenConfig g = gen_cfg(Family::hyperbolic);
  const Sample s = generate(g, random_sources(g, 2));
  const Model m = optimum(Family::hyperbolic);
  const ProbeResult r = probe_missing(m, s, 10 * g.alpha);
  CHECK(r.perturbed_row == 25);
  REQUIRE_FALSE(r.flagged.empty());
  for (auto row : r.flagged) {
    CHECK(row + 2 >= 25);
    CHECK(row <= 27);
  }
  const std::size_t margin = zero_feature_margin(m.config);
  for (auto row : r.flagged) {
    CHECK(row >= margin);
    CHECK(row < r.row_profile.size() - margin);
  }
  const ProbeResult same = probe_missing(m, s, 0.0);
  CHECK(same.row_profile == same.control_profile);
}

TEST_CASE("ablation plumbing on a tiny budget") {
  const GenConfig g = gen_cfg(Family::elliptic, 10);
  const Dataset ds = make_dataset(g);
  AblationOptions opts;
  opts.train.epochs = 1;
  opts.train.steps_per_epoch = 10;
  opts.threads = 1;
  const AblationResult d = ablate_depth(ds, g, {1, 2, 3}, opts);
  CHECK(d.axis == "depth");
  REQUIRE(d.settings.size() == 3);
  CHECK(d.settings[0].label == "d1");
  CHECK(d.settings[2].widths == std::vector<std::size_t>{1, 1, 1});
  for (const auto& s : d.settings) {
    CHECK(std::isfinite(s.train_mse));
    CHECK(s.epochs == 1);
  }
  const AblationResult again = ablate_depth(ds, g, {1, 2, 3}, opts);
  for (std::size_t i = 0; i < 3; ++i) CHECK(again.settings[i].train_mse == d.settings[i].train_mse);

  const AblationResult w = ablate_width(ds, g, {1, 2}, opts);
  CHECK(w.axis == "width");
  REQUIRE(w.settings.size() == 2);
  CHECK(w.settings[1].label == "K1=2");
  CHECK(w.settings[1].widths == std::vector<std::size_t>{2, 1});

  const fs::path p = fs::temp_directory_path() / "stencilseer_test_ablation.csv";
  write_ablation_csv(d, p);
  const std::string csv = slurp(p);
  CHECK(csv.rfind("setting,train_mse,activation_err,epochs,similarity\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  write_ablation_csv(again, p);
  CHECK(slurp(p) == csv);
  fs::remove(p);
}

TEST_CASE("thread budget reads the environment") {
  ::setenv("STENCILSEER_THREADS", "3", 1);
  CHECK(thread_budget() == 3);
  ::setenv("STENCILSEER_THREADS", "zero", 1);
  CHECK(thread_budget() == 1);
  ::unsetenv("STENCILSEER_THREADS");
  CHECK(thread_budget() == 1);
}

TEST_CASE("PGM heatmaps and probe CSV") {
  const fs::path dir = fs::temp_directory_path() / "stencilseer_test_maps";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Tensor3 t(3, 4, 1);
  t(0, 0) = -1.0;
  t(2, 3) = 3.0;
  write_pgm(t, 0, dir / "a.pgm");
  std::ifstream in(dir / "a.pgm");
  std::string magic, comment, dims, maxval;
  std::getline(in, magic);
  std::getline(in, comment);
  std::getline(in, dims);
  std::getline(in, maxval);
  CHECK(magic == "P2");
  CHECK(comment.rfind("#", 0) == 0);
  CHECK(comment.find("min -1") != std::string::npos);
  CHECK(comment.find("max 3") != std::string::npos);
  CHECK(dims == "4 3");
  CHECK(maxval == "65535");
  int first = -1, last = -1, v = 0;
  in >> first;
  while (in >> v) last = v;
  CHECK(first == 0);
  CHECK(last == 65535);

  const GenConfig g = gen_cfg(Family::elliptic);
  const Sample s = generate(g, random_sources(g, 1));
  const auto names = export_maps(optimum(Family::elliptic), s, dir, "x_");
  CHECK(names.size() == 3);
  for (const auto& n : names) CHECK(fs::exists(dir / n));

  const ProbeResult r = probe_scaling(optimum(Family::elliptic), s, 1.0);
  write_probe_csv(r, dir / "p.csv");
  CHECK(fs::file_size(dir / "p.csv") > 0);
  fs::remove_all(dir);
}

}  // TEST_SUITE
