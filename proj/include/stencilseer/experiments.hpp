#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stencilseer/datagen.hpp"
#include "stencilseer/model.hpp"
#include "stencilseer/tensor.hpp"
#include "stencilseer/verify.hpp"

namespace stencilseer {

struct AblationSetting {
  /// "d<n>" for depth, "K1=<k>" for width.
  std::string label;
  std::vector<std::size_t> widths;
  double train_mse = 0.0;
  double val_mse = 0.0;
  /// Mean over validation samples of the zero-feature max-abs.
  double activation_err = 0.0;
  std::size_t epochs = 0;
  /// Depth axis: composed stack vs the analytic stencil (best shift and
  /// orientation). Width axis: best layer-1 kernel vs the analytic factor.
  double similarity = 0.0;
  bool diverged = false;
  std::string stop_reason;
  KernelStack encoder;
};

struct AblationResult {
  std::string axis;
  std::vector<AblationSetting> settings;
  /// Outcome of the axis-specific assertion; `failure` says what broke.
  bool passed = false;
  std::string failure;
};

struct AblationOptions {
  TrainOptions train{};
  std::uint64_t seed = 0;
  /// Negative keeps the family default.
  double lambda_zf = -1.0;
  /// Settings trained concurrently; 0 reads STENCILSEER_THREADS.
  std::size_t threads = 0;
};

/// Worker count from STENCILSEER_THREADS, or 1 when unset or invalid.
std::size_t thread_budget();

/// Trains one-kernel-per-layer elliptic models at each depth on the same
/// split and seed, then checks err(d2) < err(d3) < err(d1),
/// similarity(d2) >= 0.999 and similarity(d1) < 0.9.
AblationResult ablate_depth(const Dataset& ds, const GenConfig& scheme,
                            const std::vector<std::size_t>& depths,
                            const AblationOptions& opts);

/// Depth-2 elliptic models with K2 = 1 and K1 from `k1`. For K1 >= 2 the
/// loss must stay <= 1e-5 with no layer-1 kernel at similarity >= 0.95; K1 = 1
/// must reach similarity >= 0.999.
AblationResult ablate_width(const Dataset& ds, const GenConfig& scheme,
                            const std::vector<std::size_t>& k1,
                            const AblationOptions& opts);

void write_ablation_csv(const AblationResult& r, const std::filesystem::path& path);

/// Similarity maximized over every placement of the smaller stencil inside
/// the larger one and over both orientations.
double placement_similarity(const Stencil& learned, const Stencil& truth);

enum class PerturbMode { additive, zeroing };

struct ProbeResult {
  std::string kind;
  /// Scaling probe.
  double factor = 1.0;
  std::vector<double> ratios;
  double max_scaled_preactivation = 0.0;
  /// Missing-data probe.
  std::size_t perturbed_row = 0;
  double amplitude = 0.0;
  PerturbMode mode = PerturbMode::additive;
  std::vector<std::size_t> flagged;
  std::vector<std::size_t> control_flagged;
  /// Per-row mean-abs of the last encoder map, perturbed and control.
  std::vector<double> row_profile;
  std::vector<double> control_profile;

  /// False when the probe's preconditions do not hold.
  bool valid = true;
  std::string invalid_reason;
  bool passed = false;
};

/// Relative tolerance of the scaling probe's linearity check.
inline constexpr double kScalingTolerance = 1e-4;

/// Per-layer ||act(factor x)|| / ||act(x)||. Invalid when any scaled
/// pre-activation exceeds 0.1 (near-linear bound) or 0.5 (saturation).
ProbeResult probe_scaling(const Model& model, const Sample& sample, double factor);

/// The sample with `amplitude` added to (or, for zeroing, written over)
/// spatial row `row` at every time.
Sample perturb_row(const Sample& sample, std::size_t row, double amplitude,
                   PerturbMode mode = PerturbMode::additive);

/// Interior rows of the last-map profile whose mean-abs exceeds 5x the
/// median interior row.
std::vector<std::size_t> flag_rows(const std::vector<double>& profile,
                                   std::size_t margin);

/// Perturbs row W/2 and flags rows of the last encoder map. Passes when the
/// perturbed flags are nonempty and within +-2 of the perturbed row (in map
/// coordinates, which lag image rows by up to depth) and the control flags
/// nothing.
ProbeResult probe_missing(const Model& model, const Sample& sample,
                          double amplitude,
                          PerturbMode mode = PerturbMode::additive);

void write_probe_csv(const ProbeResult& r, const std::filesystem::path& path);

/// 16-bit P2 heatmap of one channel, rows = space, one line per row, with
/// the mapped min/max recorded in a comment.
void write_pgm(const Tensor3& map, std::size_t channel,
               const std::filesystem::path& path);

/// Writes layer<l>_ch<c>.pgm for every encoder map plus the pooled output,
/// and returns the file names written.
std::vector<std::string> export_maps(const Model& model, const Sample& sample,
                                     const std::filesystem::path& dir,
                                     const std::string& prefix = "");

}  // namespace stencilseer
