#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace rep3d {

// Dense rank-N array of doubles, row-major. Immutable by convention: the
// tensor ops below always return fresh tensors.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  // rank-1 convenience; a named factory so brace-lists of integers always
  // mean a shape, never data
  static Tensor of(std::initializer_list<double> values);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

// Throws std::runtime_error naming `what` if t holds a NaN/Inf.
void check_finite(const Tensor& t, const char* what);

// Pointwise primitives. Shape mismatch and non-finite results throw.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a + s * b
Tensor axpy(const Tensor& a, const Tensor& b, double s);

double sum(const Tensor& a);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

Tensor sigmoid_val(const Tensor& x);
// tanh approximation with constants sqrt(2/pi) = 0.7978845608028654
// and 0.044715.
Tensor gelu_val(const Tensor& x);

// Normalizes each (leading..., group) slice of `x` over its trailing
// `group_rank` axes: zero mean, unit variance (biased, eps-stabilized),
// then per-channel affine. `channel_axis` indexes the axis whose extent
// matches gain/bias.
Tensor layer_norm_val(const Tensor& x, std::size_t channel_axis,
                      std::size_t group_rank, const Tensor& gain,
                      const Tensor& bias, double eps = 1e-6);

} // namespace rep3d
