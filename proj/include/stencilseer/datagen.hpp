#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stencilseer/tensor.hpp"

namespace stencilseer {

enum class Family : std::uint8_t {
  hyperbolic = 0,
  elliptic = 1,
  parabolic = 2,
  coupled = 3,
};

std::string_view family_name(Family f);
/// Accepts the full names and the short tags hyp, elp, par, cpl.
Family parse_family(std::string_view name);
/// Image channel count: 2 for coupled (u, v), 1 otherwise.
std::size_t family_channels(Family f);

struct GenConfig {
  Family family = Family::hyperbolic;
  std::size_t W = 50;
  std::size_t H = 50;
  double dx = 1.0;
  /// Time step of the elliptic family, and of the coupled family when the
  /// flow is at rest. The other families derive their step from `cfl`.
  double dt = 1.0;
  double a = 1.0;
  double b = 1.0;
  /// Transport Courant number a*dt/(b*dx) (hyperbolic), peak transport
  /// Courant number (coupled) or diffusion number a*dt/(b*dx^2) (parabolic).
  double cfl = 0.5;
  double alpha = 1e-4;
  std::size_t n_samples = 101;
  std::uint64_t seed = 0;
  /// Draw a random initial state (needed to make the transport and
  /// diffusion operators identifiable from the data).
  bool random_initial = true;

  void validate() const;
  /// Time step of the hyperbolic, parabolic and elliptic schemes. The
  /// coupled step depends on the sources, see coupled_time_step().
  double time_step() const;
};

/// Point sources and initial states. Boundary traces have length H and are
/// applied one cell inside each end (rows 1 and W-2); initial states have
/// length W. Empty vectors mean "all zero".
struct SourceSpec {
  std::vector<double> q0;
  std::vector<double> qL;
  std::vector<double> p0;
  std::vector<double> pL;
  std::vector<double> f;
  std::vector<double> g;
  /// Coupled family only: replaces the elliptic velocity by a constant.
  std::optional<double> forced_velocity;
};

struct SampleMeta {
  Family family = Family::hyperbolic;
  double a = 1.0;
  double b = 1.0;
  double cfl = 0.5;
  std::uint64_t seed = 0;

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

/// image: W x H x C (space, time, channel). boundary: 2 x H x C holding the
/// per-cell source increments actually applied at the injection (row 0) and
/// production (row 1)
/// points. For the coupled family channel 0 is u (sources p) and channel 1
/// is v (sources q).
struct Sample {
  Tensor3 image;
  Tensor3 boundary;
  SampleMeta meta;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  Family family = Family::hyperbolic;
  std::vector<Sample> samples;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;

  std::size_t W() const;
  std::size_t H() const;
  std::size_t channels() const;
};

/// dt = cfl*b*dx / (peak face velocity over the run), or cfg.dt when the
/// flow is at rest.
double coupled_time_step(const GenConfig& cfg, const SourceSpec& src);

/// Row indices carrying the injection and production sources.
std::size_t injection_row();
std::size_t production_row(std::size_t W);

/// Seeded smooth random signal: a sum of four random sinusoids rescaled so
/// that its max-abs is exactly `amplitude`.
std::vector<double> smooth_signal(std::size_t n, double amplitude,
                                  std::uint64_t seed);

/// Neumann Poisson solve a*u'' = p on a cell grid with mean(u) = 0.
/// Boundary rows read a(u1 - u0)/dx^2 = p0/dx and
/// a(u[W-2] - u[W-1])/dx^2 = p[W-1]/dx.
std::vector<double> solve_tridiagonal_neumann(std::span<const double> p,
                                              double a, double dx);

/// One explicit flux-form upwind step. `face_velocity` has W + 1 entries
/// (face k sits between cells k-1 and k); ghost cells outside the domain
/// hold zero, so the outer faces act as inflow-free open boundaries.
std::vector<double> upwind_transport_step(std::span<const double> v,
                                          std::span<const double> face_velocity,
                                          double dt_over_b_dx);

Sample gen_hyperbolic(const GenConfig& cfg, const SourceSpec& src);
Sample gen_elliptic(const GenConfig& cfg, const SourceSpec& src);
Sample gen_parabolic(const GenConfig& cfg, const SourceSpec& src);
Sample gen_coupled(const GenConfig& cfg, const SourceSpec& src);
Sample generate(const GenConfig& cfg, const SourceSpec& src);

/// Seeded random sources for the configured family.
SourceSpec random_sources(const GenConfig& cfg, std::uint64_t seed);
/// Per-sample seed derived from the dataset seed and sample index.
std::uint64_t sample_seed(std::uint64_t seed, std::size_t index);

/// cfg.n_samples samples with an 80/20 seeded split.
Dataset make_dataset(const GenConfig& cfg);
void split_dataset(Dataset& ds, std::uint64_t seed, double train_fraction = 0.8);

/// Byte count of a serialized dataset.
std::size_t dataset_file_size(std::size_t W, std::size_t H, std::size_t C,
                              std::size_t N);
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
/// The split is not stored; callers re-split with their seed.
Dataset read_dataset(const std::filesystem::path& path);

/// One CSV per sample and channel (rows = space, columns = time), plus the
/// boundary labels. Returns the files written.
std::vector<std::filesystem::path> export_csv(const Dataset& ds,
                                              const std::filesystem::path& dir);

}  // namespace stencilseer
