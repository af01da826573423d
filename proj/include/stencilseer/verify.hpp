#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "stencilseer/datagen.hpp"
#include "stencilseer/model.hpp"
#include "stencilseer/tensor.hpp"

namespace stencilseer {

/// A small single-channel coefficient array, rows = space, cols = time.
using Stencil = Tensor3;

Stencil make_stencil(std::initializer_list<std::initializer_list<double>> rows);
Stencil kernel_as_stencil(const Kernel2x2& k, std::size_t ch = 0);
Stencil transpose(const Stencil& s);
/// Zero-pads `s` at the bottom and right to rows x cols.
Stencil pad_to(const Stencil& s, std::size_t rows, std::size_t cols);

struct AnalyticStencil {
  /// Annihilator of the family's scheme.
  Stencil stencil;
  /// Residual of `stencil` at a source cell divided by the source value.
  double source_gain = 1.0;
  /// An encoder stack composing exactly to `stencil`, when one exists for
  /// the given depth.
  std::optional<KernelStack> factors;
};

/// Exact annihilator of the generator's scheme for `family`, in the
/// orientation and alignment the encoder of the given depth produces.
AnalyticStencil analytic_stencil(Family family, const GenConfig& scheme,
                                 std::size_t depth);

/// Polynomial product of a single-channel chain of 2x2 kernels.
Stencil compose_stack(const KernelStack& stack);
/// Linear composition summed over all channel paths from image channel
/// `in_ch` to encoder output channel `out_ch` (valid in the small-signal
/// regime where tanh is the identity). Coupled stacks are rejected.
Stencil compose_linear(const KernelStack& stack, std::size_t out_ch = 0,
                       std::size_t in_ch = 0);
/// Full 2D polynomial product of two stencils.
Stencil compose(const Stencil& first, const Stencil& second);

/// |cosine| between the flattened arrays after zero-padding to a common
/// extent. Throws std::domain_error for a zero argument.
double kernel_similarity(const Stencil& learned, const Stencil& truth);
/// Best of kernel_similarity over the identity and transpose orientations.
double oriented_similarity(const Stencil& learned, const Stencil& truth);

struct LayerActivation {
  double interior_max_abs = 0.0;
  double interior_mean_abs = 0.0;
  double boundary_max_abs = 0.0;
  /// Mean-abs of every spatial row.
  std::vector<double> row_profile;
};

struct ActivationReport {
  std::vector<LayerActivation> layers;
  /// Interior max-abs of the last encoder map (the zero-feature map).
  double zero_feature_max_abs() const;
};

/// Rows excluded at each spatial end when computing interior statistics.
inline constexpr std::size_t kActivationEdgeRows = 2;

ActivationReport activation_report(const Model& model, const Sample& sample);
ActivationReport activation_report(const Encoding& enc);

/// Max-abs of the stencil cross-correlated over the image interior,
/// excluding stencil-rows + 1 output rows at each spatial end.
double residual_oracle(const Stencil& stencil, const Sample& sample,
                       std::size_t channel = 0);
double residual_oracle(const Stencil& stencil, const Tensor3& image,
                       std::size_t channel = 0);

struct Factorization {
  Kernel2x2 first;
  Kernel2x2 second;
  /// ||compose(first, second) - target||_2.
  double residual = 0.0;
};

/// Multi-start Levenberg-Marquardt search for the 2x2 pair whose
/// composition is closest to `target` (at most 3x3, padded if smaller).
Factorization best_factorization(const Stencil& target, std::size_t starts = 64,
                                 std::uint64_t seed = 0);

void write_activation_csv(const ActivationReport& report,
                          const std::filesystem::path& path);
void write_stencil(const Stencil& s, const std::filesystem::path& path);
Stencil read_stencil(const std::filesystem::path& path);

}  // namespace stencilseer
