#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace stencilseer {

/// Dense rows x cols x channels field of doubles. Storage is row-major with
/// the channel index fastest: ((r * cols + c) * channels + ch).
///
/// For space-time images axis 0 is space (W) and axis 1 is time (H).
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t rows, std::size_t cols, std::size_t channels,
          double fill = 0.0);
  Tensor3(std::size_t rows, std::size_t cols, std::size_t channels,
          std::vector<double> data);

  /// Single-channel tensor from nested row lists.
  static Tensor3 from_rows(
      std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c, std::size_t ch = 0) {
    return data_[(r * cols_ + c) * channels_ + ch];
  }
  double operator()(std::size_t r, std::size_t c, std::size_t ch = 0) const {
    return data_[(r * cols_ + c) * channels_ + ch];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Tensor3& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ &&
           channels_ == other.channels_;
  }
  bool all_finite() const;
  double max_abs() const;

  /// Copy of one channel as a single-channel tensor.
  Tensor3 channel(std::size_t ch) const;

  Tensor3& operator+=(const Tensor3& other);
  Tensor3& operator*=(double s);

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

Tensor3 operator+(Tensor3 a, const Tensor3& b);
Tensor3 operator*(double s, Tensor3 a);

/// Sum of elementwise products over all entries.
double inner_product(const Tensor3& a, const Tensor3& b);

/// One 2x2 filter over Cin input channels; weight (i, j, ch) sits at
/// (i * 2 + j) * Cin + ch. No bias.
class Kernel2x2 {
 public:
  Kernel2x2() = default;
  explicit Kernel2x2(std::size_t in_channels, double fill = 0.0);
  Kernel2x2(std::size_t in_channels, std::vector<double> weights);

  /// Single-channel kernel [[a, b], [c, d]].
  static Kernel2x2 single(double a, double b, double c, double d);

  std::size_t in_channels() const { return in_channels_; }
  double& operator()(std::size_t i, std::size_t j, std::size_t ch = 0) {
    return w_[(i * 2 + j) * in_channels_ + ch];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t ch = 0) const {
    return w_[(i * 2 + j) * in_channels_ + ch];
  }
  std::span<double> weights() { return w_; }
  std::span<const double> weights() const { return w_; }
  double sum() const;

  friend bool operator==(const Kernel2x2&, const Kernel2x2&) = default;

 private:
  std::size_t in_channels_ = 0;
  std::vector<double> w_;
};

/// The K kernels of one convolution layer.
using KernelLayer = std::vector<Kernel2x2>;
/// Learnable content of a model: one KernelLayer per conv layer.
using KernelStack = std::vector<KernelLayer>;

std::size_t parameter_count(const KernelStack& stack);
std::vector<double> flatten(const KernelStack& stack);
/// Writes `values` into `stack` in flatten() order.
void unflatten(std::span<const double> values, KernelStack& stack);

}  // namespace stencilseer
