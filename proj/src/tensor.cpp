#include "stencilseer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "stencilseer/errors.hpp"

namespace stencilseer {

Tensor3::Tensor3(std::size_t rows, std::size_t cols, std::size_t channels,
                 double fill)
    : rows_(rows),
      cols_(cols),
      channels_(channels),
      data_(rows * cols * channels, fill) {}

Tensor3::Tensor3(std::size_t rows, std::size_t cols, std::size_t channels,
                 std::vector<double> data)
    : rows_(rows), cols_(cols), channels_(channels), data_(std::move(data)) {
  if (data_.size() != rows * cols * channels) {
    throw ShapeError("Tensor3: data length " + std::to_string(data_.size()) +
                     " does not match dims");
  }
}

Tensor3 Tensor3::from_rows(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Tensor3::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor3(r, c, 1, std::move(data));
}

bool Tensor3::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor3::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Tensor3 Tensor3::channel(std::size_t ch) const {
  if (ch >= channels_) throw ShapeError("Tensor3::channel: index out of range");
  Tensor3 out(rows_, cols_, 1);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out(r, c) = (*this)(r, c, ch);
  return out;
}

Tensor3& Tensor3::operator+=(const Tensor3& other) {
  if (!same_shape(other)) throw ShapeError("Tensor3 +=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor3& Tensor3::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
Tensor3 operator*(double s, Tensor3 a) { return a *= s; }

double inner_product(const Tensor3& a, const Tensor3& b) {
  if (!a.same_shape(b)) throw ShapeError("inner_product: shape mismatch");
  return std::inner_product(a.data().begin(), a.data().end(), b.data().begin(),
                            0.0);
}

Kernel2x2::Kernel2x2(std::size_t in_channels, double fill)
    : in_channels_(in_channels), w_(4 * in_channels, fill) {}

Kernel2x2::Kernel2x2(std::size_t in_channels, std::vector<double> weights)
    : in_channels_(in_channels), w_(std::move(weights)) {
  if (w_.size() != 4 * in_channels) {
    throw ShapeError("Kernel2x2: expected " + std::to_string(4 * in_channels) +
                     " weights, got " + std::to_string(w_.size()));
  }
}

Kernel2x2 Kernel2x2::single(double a, double b, double c, double d) {
  return Kernel2x2(1, {a, b, c, d});
}

double Kernel2x2::sum() const {
  return std::accumulate(w_.begin(), w_.end(), 0.0);
}

std::size_t parameter_count(const KernelStack& stack) {
  std::size_t n = 0;
  for (const auto& layer : stack)
    for (const auto& k : layer) n += k.weights().size();
  return n;
}

std::vector<double> flatten(const KernelStack& stack) {
  std::vector<double> out;
  out.reserve(parameter_count(stack));
  for (const auto& layer : stack)
    for (const auto& k : layer)
      out.insert(out.end(), k.weights().begin(), k.weights().end());
  return out;
}

void unflatten(std::span<const double> values, KernelStack& stack) {
  if (values.size() != parameter_count(stack)) {
    throw ShapeError("unflatten: parameter count mismatch");
  }
  std::size_t pos = 0;
  for (auto& layer : stack) {
    for (auto& k : layer) {
      auto w = k.weights();
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(pos), w.size(),
                  w.begin());
      pos += w.size();
    }
  }
}

}  // namespace stencilseer
