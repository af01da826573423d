#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "stencilseer/adadelta.hpp"
#include "stencilseer/datagen.hpp"
#include "stencilseer/tensor.hpp"

namespace stencilseer {

enum class InitMode { seeded_random, stencil };

struct ModelConfig {
  Family family = Family::hyperbolic;
  /// K1..Kn; the depth is widths.size().
  std::vector<std::size_t> widths{1};
  /// Append the product of layer-1 channels 0 and 1 before its tanh.
  bool coupling = false;
  bool decoder = false;
  double lambda_zs = 1e-2;
  double lambda_rec = 0.0;
  /// Weight of the mean square of the interior rows of the last encoder map
  /// (the zero-feature map); 0 disables the term.
  double lambda_zf = 0.0;
  InitMode init = InitMode::seeded_random;

  std::size_t depth() const { return widths.size(); }
  std::size_t in_channels() const { return family_channels(family); }
  /// Channels of the pooled output and of the boundary labels.
  std::size_t out_channels() const { return widths.back(); }
  void validate() const;

  /// Per-family defaults: hyperbolic depth 1, elliptic (1,1), parabolic
  /// (2,1), coupled (2,2) with coupling.
  static ModelConfig defaults(Family family);
};

/// Closed-form encoder parameter count of the architecture table.
std::size_t encoder_parameter_count(const ModelConfig& cfg);

struct Model {
  ModelConfig config;
  KernelStack encoder;
  KernelStack decoder;

  std::size_t encoder_parameters() const { return parameter_count(encoder); }
  std::size_t decoder_parameters() const { return parameter_count(decoder); }
};

/// Seeded uniform [-0.5, 0.5] initialization of every kernel.
Model build_model(const ModelConfig& cfg, std::uint64_t seed);

struct Encoding {
  /// Post-activation map of every encoder layer.
  std::vector<Tensor3> maps;
  /// 2 x (H - n) x K_n.
  Tensor3 pooled;
};

Encoding encode(const Model& model, const Tensor3& image);
/// Reconstruction of the (W, H, Cin) image from the pooled output and the
/// last encoder map.
Tensor3 decode(const Model& model, const Encoding& enc);

/// Boundary labels with the first n time columns dropped, aligned with the
/// valid-convolution output.
Tensor3 crop_labels(const Tensor3& boundary, std::size_t depth);

/// Row margin of the zero-feature penalty.
std::size_t zero_feature_margin(const ModelConfig& cfg);

struct LossComponents {
  /// Unweighted boundary MSE (the headline metric).
  double boundary_mse = 0.0;
  /// Weighted contributions; total is their exact sum.
  double boundary = 0.0;
  double zero_sum = 0.0;
  double reconstruction = 0.0;
  double zero_feature = 0.0;
  double total = 0.0;
};

/// L = s*(mse + lambda_rec*rec + lambda_zf*zf) + zero_sum, with s the label
/// normalization (1 for the unnormalized loss).
LossComponents total_loss(const Model& model, const Sample& sample,
                          double label_scale = 1.0);

/// Loss and its gradient with respect to flatten(encoder) followed by
/// flatten(decoder).
struct LossGradient {
  LossComponents loss;
  std::vector<double> gradient;
};
LossGradient loss_gradient(const Model& model, const Sample& sample,
                           double label_scale = 1.0);

std::vector<double> model_parameters(const Model& model);
void set_model_parameters(Model& model, std::span<const double> values);

struct TrainOptions {
  std::size_t epochs = 150;
  std::size_t steps_per_epoch = 2000;
  /// Compared against the validation MSE after the same label
  /// normalization the loss uses.
  double stop_threshold = 1e-11;
  std::uint64_t seed = 0;
  AdaDeltaParams optimizer{};
  /// Divide the data terms by the mean square of the training labels so the
  /// optimizer sees O(1) gradients regardless of the source amplitude.
  bool normalize_loss = true;
  /// Called after every epoch; return false to stop.
  std::function<bool(std::size_t epoch, double train_mse, double val_mse)>
      on_epoch;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double regularizer = 0.0;
  double best_val_mse = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> history;
  std::size_t epochs_run = 0;
  std::size_t steps_per_epoch = 0;
  double wall_seconds = 0.0;
  KernelStack final_encoder;
  KernelStack final_decoder;
  std::string stop_reason;
  bool diverged = false;

  double final_val_mse() const;
  double final_train_mse() const;
};

/// Mean boundary MSE over the given sample indices.
double mean_boundary_mse(const Model& model, const Dataset& ds,
                         const std::vector<std::size_t>& indices);

TrainReport train(Model& model, const Dataset& ds, const TrainOptions& opts);

/// Sets the encoder to the analytic factorization of the family's scheme
/// stencil, scaled so the pooled output reproduces the raw source labels.
void init_from_stencils(Model& model, const GenConfig& scheme);

void write_weights(const Model& model, const std::filesystem::path& path);
Model read_weights(const std::filesystem::path& path);

void write_train_report_csv(const TrainReport& report,
                            const std::filesystem::path& path);

}  // namespace stencilseer
