#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "stencilseer/datagen.hpp"
#include "stencilseer/errors.hpp"
#include "stencilseer/verify.hpp"

using namespace stencilseer;
namespace fs = std::filesystem;

namespace {

GenConfig config(Family f, std::size_t W = 50, std::size_t H = 50) {
  GenConfig g;
  g.family = f;
  g.W = W;
  g.H = H;
  return g;
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("stencilseer_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_SUITE("datagen") {

TEST_CASE("Neumann solve: zero source gives zero") {
  const auto u = solve_tridiagonal_neumann(std::vector<double>(7, 0.0), 1.0, 1.0);
  for (double v : u) CHECK(v == 0.0);
}

TEST_CASE("Neumann solve: W = 4 worked example") {
  const auto u = solve_tridiagonal_neumann(std::vector<double>{1, 0, 0, -1}, 1.0, 1.0);
  const double expect[] = {-1.5, -0.5, 0.5, 1.5};
  for (std::size_t i = 0; i < 4; ++i) CHECK(u[i] == doctest::Approx(expect[i]).epsilon(1e-14));
}

TEST_CASE("Neumann solve: residual of the full system on random compatible sources") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t W = 5 + static_cast<std::size_t>(trial) * 3;
    const double a = 0.5 + 0.1 * trial, dx = 0.25 + 0.05 * trial;
    std::vector<double> p(W);
    for (double& v : p) v = d(rng);
    // Compatibility: p0 + pL + dx * sum(interior) = 0.
    double net = p[0];
    for (std::size_t i = 1; i + 1 < W; ++i) net += p[i] * dx;
    p[W - 1] = -net;
    const auto u = solve_tridiagonal_neumann(p, a, dx);
    const double k = a / (dx * dx);
    double worst = std::abs(k * (u[1] - u[0]) - p[0] / dx);
    worst = std::max(worst, std::abs(k * (u[W - 2] - u[W - 1]) - p[W - 1] / dx));
    for (std::size_t i = 1; i + 1 < W; ++i)
      worst = std::max(worst, std::abs(k * (u[i - 1] - 2 * u[i] + u[i + 1]) - p[i]));
    CHECK(worst <= 1e-12);
    double mean = 0.0;
    for (double v : u) mean += v;
    CHECK(std::abs(mean / static_cast<double>(W)) <= 1e-14);
  }
}

TEST_CASE("Neumann solve: incompatible source and tiny grid are rejected") {
  CHECK_THROWS_AS(solve_tridiagonal_neumann(std::vector<double>{1, 0, 0, 0}, 1, 1),
                  CompatibilityError);
  CHECK_THROWS_AS(solve_tridiagonal_neumann(std::vector<double>{0, 0}, 1, 1), ShapeError);
}

TEST_CASE("hyperbolic: CFL 1 shifts a unit pulse exactly along the diagonal") {
  GenConfig g = config(Family::hyperbolic, 20, 20);
  g.cfl = 1.0;
  SourceSpec src;
  src.g.assign(20, 0.0);
  src.g[0] = 1.0;
  const Sample s = gen_hyperbolic(g, src);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t n = 0; n < 20; ++n) CHECK(s.image(i, n) == (i == n ? 1.0 : 0.0));
}

TEST_CASE("hyperbolic: CFL 0.5 pulse follows the binomial law") {
  GenConfig g = config(Family::hyperbolic, 30, 20);
  g.cfl = 0.5;
  SourceSpec src;
  src.g.assign(30, 0.0);
  src.g[0] = 1.0;
  const Sample s = gen_hyperbolic(g, src);
  for (std::size_t n = 0; n < 20; ++n)
    for (std::size_t i = 0; i < 30; ++i) {
      const double expect = i <= n ? binomial(n, i) * std::pow(0.5, static_cast<double>(n)) : 0.0;
      CHECK(s.image(i, n) == doctest::Approx(expect).epsilon(1e-13));
    }
}

TEST_CASE("hyperbolic: CFL outside (0, 1] is a stability error") {
  GenConfig g = config(Family::hyperbolic);
  g.cfl = 1.5;
  CHECK_THROWS_AS(gen_hyperbolic(g, {}), StabilityError);
}

TEST_CASE("each family's own stencil annihilates its data; the others do not") {
  const Family fams[] = {Family::hyperbolic, Family::elliptic, Family::parabolic};
  for (Family data_f : fams) {
    GenConfig g = config(data_f);
    g.seed = 17;
    const Sample s = generate(g, random_sources(g, 17));
    for (Family st_f : fams) {
      GenConfig sg = config(st_f);
      const Stencil st = analytic_stencil(st_f, sg, 2).stencil;
      const double res = residual_oracle(st, s);
      CAPTURE(family_name(data_f));
      CAPTURE(family_name(st_f));
      if (st_f == data_f) {
        CHECK(res <= 1e-12);
      } else {
        CHECK(res > 1e-8);
      }
    }
  }
}

TEST_CASE("hyperbolic residual under the depth-1 annihilator") {
  GenConfig g = config(Family::hyperbolic);
  const Sample s = gen_hyperbolic(g, random_sources(g, 3));
  CHECK(residual_oracle(analytic_stencil(Family::hyperbolic, g, 1).stencil, s) <= 1e-12);
}

TEST_CASE("elliptic: identical sources give identical columns; columns have mean 0") {
  GenConfig g = config(Family::elliptic, 20, 6);
  SourceSpec src;
  src.p0 = {1e-4, 2e-4, 1e-4, -3e-4, 2e-4, 5e-5};
  src.pL = src.p0;
  for (double& v : src.pL) v = -v;
  const Sample s = gen_elliptic(g, src);
  for (std::size_t i = 0; i < 20; ++i) CHECK(s.image(i, 0) == s.image(i, 2));
  for (std::size_t t = 0; t < 6; ++t) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 20; ++i) mean += s.image(i, t);
    CHECK(std::abs(mean) <= 1e-16);
  }
}

TEST_CASE("elliptic: permuting source columns permutes solution columns") {
  GenConfig g = config(Family::elliptic, 16, 5);
  SourceSpec a;
  a.p0 = {1, 2, 3, 4, 5};
  a.pL = {-1, -2, -3, -4, -5};
  SourceSpec b;
  b.p0 = {5, 3, 1, 4, 2};
  b.pL = {-5, -3, -1, -4, -2};
  const std::size_t perm[] = {4, 2, 0, 3, 1};
  const Sample sa = gen_elliptic(g, a), sb = gen_elliptic(g, b);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t i = 0; i < 16; ++i) CHECK(sb.image(i, t) == sa.image(i, perm[t]));
}

TEST_CASE("elliptic: interior second difference vanishes away from sources") {
  GenConfig g = config(Family::elliptic);
  const Sample s = gen_elliptic(g, random_sources(g, 9));
  CHECK(residual_oracle(make_stencil({{-1}, {2}, {-1}}), s) <= 1e-12);
}

TEST_CASE("parabolic: zero source conserves mass over 50 steps") {
  GenConfig g = config(Family::parabolic);
  SourceSpec src;
  src.f = smooth_signal(50, 1.0, 4);
  const Sample s = gen_parabolic(g, src);
  double m0 = 0.0;
  for (std::size_t i = 0; i < 50; ++i) m0 += s.image(i, 0);
  for (std::size_t n = 1; n < 50; ++n) {
    double m = 0.0;
    for (std::size_t i = 0; i < 50; ++i) m += s.image(i, n);
    CHECK(std::abs(m - m0) <= 1e-10);
  }
}

TEST_CASE("parabolic: r = 0.5 averages the two neighbours") {
  GenConfig g = config(Family::parabolic, 41, 12);
  g.cfl = 0.5;
  SourceSpec src;
  src.f.assign(41, 0.0);
  src.f[20] = 1.0;
  const Sample s = gen_parabolic(g, src);
  for (std::size_t n = 0; n < 11; ++n)
    for (std::size_t i = 1; i < 40; ++i) {
      CHECK(s.image(i, n + 1) == 0.5 * (s.image(i - 1, n) + s.image(i + 1, n)));
      if ((i + n) % 2 == 1) CHECK(s.image(i, n) == 0.0);
    }
  CHECK(s.image(20, 2) == 0.5);
  CHECK(s.image(22, 2) == 0.25);
}

TEST_CASE("parabolic: r > 0.5 is a stability error") {
  GenConfig g = config(Family::parabolic);
  g.cfl = 0.6;
  CHECK_THROWS_AS(gen_parabolic(g, {}), StabilityError);
}

TEST_CASE("coupled: zero pressure gives zero velocity and a frozen v") {
  GenConfig g = config(Family::coupled, 20, 15);
  SourceSpec src;
  src.g = smooth_signal(20, 1e-4, 2);
  const Sample s = gen_coupled(g, src);
  for (std::size_t n = 0; n < 15; ++n)
    for (std::size_t i = 0; i < 20; ++i) {
      CHECK(s.image(i, n, 0) == 0.0);
      CHECK(s.image(i, n, 1) == s.image(i, 0, 1));
    }
}

TEST_CASE("coupled: forced constant velocity reproduces the hyperbolic generator bit-exactly") {
  GenConfig h = config(Family::hyperbolic);
  h.cfl = 0.5;
  h.a = 1.0;
  SourceSpec src = random_sources(h, 12);
  const Sample hs = gen_hyperbolic(h, src);

  GenConfig c = h;
  c.family = Family::coupled;
  src.forced_velocity = h.a;
  src.p0 = smooth_signal(50, 1e-4, 3);
  src.pL = src.p0;
  for (double& v : src.pL) v = -v;
  const Sample cs = gen_coupled(c, src);
  for (std::size_t n = 0; n < 50; ++n)
    for (std::size_t i = 0; i < 50; ++i) CHECK(cs.image(i, n, 1) == hs.image(i, n));
  for (std::size_t n = 0; n < 50; ++n) {
    CHECK(cs.boundary(0, n, 1) == hs.boundary(0, n));
    CHECK(cs.boundary(1, n, 1) == hs.boundary(1, n));
  }
}

TEST_CASE("coupled: v mass change per step equals outflow flux plus sources") {
  GenConfig g = config(Family::coupled);
  const SourceSpec src = random_sources(g, 21);
  const Sample s = gen_coupled(g, src);
  REQUIRE(s.image.all_finite());
  const double dt = coupled_time_step(g, src);
  const double lam = dt / (g.b * g.dx);
  const std::size_t W = g.W;
  for (std::size_t n = 0; n + 1 < g.H; ++n) {
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t i = 0; i < W; ++i) {
      m0 += s.image(i, n, 1);
      m1 += s.image(i, n + 1, 1);
    }
    // Independent flux: last face carries u[W-1] upwind from the last cell;
    // the first face sees a zero ghost.
    const double u_out = s.image(W - 1, n, 0);
    const double out_flux = u_out >= 0 ? u_out * s.image(W - 1, n, 1) : 0.0;
    const double u_in = s.image(0, n, 0);
    const double in_flux = u_in < 0 ? u_in * s.image(0, n, 1) : 0.0;
    const double sources = s.boundary(0, n + 1, 1) + s.boundary(1, n + 1, 1);
    CHECK(std::abs((m1 - m0) - (-lam * (out_flux - in_flux) + sources)) <= 1e-10);
  }
}

TEST_CASE("coupled: CFL above 1 reports the offending step") {
  GenConfig g = config(Family::coupled, 20, 10);
  g.cfl = 1.5;
  SourceSpec src;
  src.p0.assign(10, 1e-4);
  src.pL.assign(10, -1e-4);
  try {
    gen_coupled(g, src);
    FAIL("expected a stability error");
  } catch (const StabilityError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("generators are pure and bounded") {
  for (Family f : {Family::hyperbolic, Family::elliptic, Family::parabolic, Family::coupled}) {
    GenConfig g = config(f);
    const Sample a = generate(g, random_sources(g, 44));
    const Sample b = generate(g, random_sources(g, 44));
    CHECK(a == b);
    CHECK(a.image.all_finite());
    CHECK(a.image.max_abs() <= g.alpha * 50 * 50);
    CHECK(a.image.channels() == family_channels(f));
    CHECK(a.boundary.rows() == 2);
    CHECK(a.boundary.cols() == 50);
  }
}

TEST_CASE("labels hold the applied source increments at the injection and production rows") {
  GenConfig g = config(Family::hyperbolic, 12, 8);
  SourceSpec src;
  src.q0 = {0, 0, 0, 1e-4, 0, 0, 0, 0};
  const Sample s = gen_hyperbolic(g, src);
  CHECK(s.boundary(0, 3) == g.time_step() / g.b * 1e-4);
  // The increment enters at the injection row on top of transport.
  CHECK(s.image(injection_row(), 3) == s.boundary(0, 3));
}

TEST_CASE("dataset split is 80/20, disjoint and complete") {
  GenConfig g = config(Family::elliptic, 10, 10);
  g.n_samples = 101;
  const Dataset ds = make_dataset(g);
  CHECK(ds.train.size() == 81);
  CHECK(ds.val.size() == 20);
  std::set<std::size_t> all(ds.train.begin(), ds.train.end());
  for (auto v : ds.val) CHECK(all.insert(v).second);
  CHECK(all.size() == 101);
  Dataset again = ds;
  split_dataset(again, g.seed);
  CHECK(again.train == ds.train);
}

TEST_CASE("dataset file: round trip, size formula and corruption") {
  const fs::path dir = scratch_dir("io");
  GenConfig g = config(Family::hyperbolic);
  g.n_samples = 101;
  const Dataset ds = make_dataset(g);
  const fs::path p = dir / "d.bin";
  write_dataset(ds, p);

  const std::size_t header = 4 + 2 + 1 + 4 * 4;
  const std::size_t record = 50 * 50 * 8 + 2 * 50 * 8 + 4 * 8;
  CHECK(fs::file_size(p) == header + 101 * record + 4);
  CHECK(dataset_file_size(50, 50, 1, 101) == fs::file_size(p));

  const Dataset back = read_dataset(p);
  CHECK(back.family == ds.family);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) CHECK(back.samples[i] == ds.samples[i]);

  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS_AS(read_dataset(p), FormatError);

  write_dataset(ds, p);
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(1000);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(read_dataset(p), FormatError);

  write_dataset(ds, p);
  fs::resize_file(p, fs::file_size(p) - 9);
  CHECK_THROWS_AS(read_dataset(p), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("CSV export writes one file per sample and channel") {
  const fs::path dir = scratch_dir("csv");
  GenConfig g = config(Family::coupled, 8, 6);
  g.n_samples = 3;
  const auto files = export_csv(make_dataset(g), dir);
  std::size_t images = 0;
  for (const auto& f : files) {
    CHECK(fs::exists(f));
    if (f.filename().string().find("boundary") == std::string::npos) ++images;
  }
  CHECK(images == 3 * 2);
  std::ifstream in(files.front());
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 8);
  fs::remove_all(dir);
}

TEST_CASE("configuration validation") {
  GenConfig g = config(Family::elliptic);
  g.W = 3;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  CHECK_THROWS_AS(parse_family("nope"), ConfigError);
  CHECK(parse_family("cpl") == Family::coupled);
  CHECK(family_name(Family::parabolic) == "parabolic");
}

}  // TEST_SUITE
