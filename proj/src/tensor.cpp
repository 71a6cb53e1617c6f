#include "rep3d/tensor.hpp"

#include <cmath>
#include <sstream>

#include "rep3d/kernels.hpp"

namespace rep3d {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("zero dimension in shape");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size())
    throw std::invalid_argument("shape " + shape_str(shape_) + " does not match data length");
}

Tensor Tensor::of(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = value;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite())
    throw std::runtime_error(std::string("non-finite value produced by ") + what);
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  kernels::add(a.data(), b.data(), out.data(), a.size());
  check_finite(out, "add");
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  kernels::sub(a.data(), b.data(), out.data(), a.size());
  check_finite(out, "sub");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  kernels::mul(a.data(), b.data(), out.data(), a.size());
  check_finite(out, "mul");
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  kernels::scale(a.data(), s, out.data(), a.size());
  check_finite(out, "scale");
  return out;
}

Tensor axpy(const Tensor& a, const Tensor& b, double s) {
  require_same_shape(a, b, "axpy");
  Tensor out(a.shape());
  kernels::axpy(a.data(), b.data(), s, out.data(), a.size());
  check_finite(out, "axpy");
  return out;
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
  return s;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i]));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

Tensor sigmoid_val(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    // branch on sign to avoid overflow in exp
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
  }
  check_finite(out, "sigmoid");
  return out;
}

Tensor gelu_val(const Tensor& x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  constexpr double kCubic = 0.044715;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + kCubic * v * v * v)));
  }
  check_finite(out, "gelu");
  return out;
}

Tensor layer_norm_val(const Tensor& x, std::size_t channel_axis,
                      std::size_t group_rank, const Tensor& gain,
                      const Tensor& bias, double eps) {
  if (group_rank == 0 || group_rank >= x.rank())
    throw std::invalid_argument("layer_norm: degenerate axis set");
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t lead_rank = x.rank() - group_rank;
  if (channel_axis >= lead_rank)
    throw std::invalid_argument("layer_norm: channel axis inside normalized axes");
  const std::size_t channels = x.dim(channel_axis);
  if (gain.size() != channels || bias.size() != channels)
    throw std::invalid_argument("layer_norm: gain/bias length must equal channel extent");

  std::size_t group = 1;
  for (std::size_t i = lead_rank; i < x.rank(); ++i) group *= x.dim(i);
  std::size_t lead = x.size() / group;
  std::size_t ch_stride = 1; // stride of channel axis within the leading index
  for (std::size_t i = channel_axis + 1; i < lead_rank; ++i) ch_stride *= x.dim(i);

  Tensor out(x.shape());
  for (std::size_t l = 0; l < lead; ++l) {
    const double* xp = x.data() + l * group;
    double* op = out.data() + l * group;
    double mean = 0.0;
    for (std::size_t i = 0; i < group; ++i) mean += xp[i];
    mean /= static_cast<double>(group);
    double var = 0.0;
    for (std::size_t i = 0; i < group; ++i) {
      const double d = xp[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(group);
    const double inv = 1.0 / std::sqrt(var + eps);
    const std::size_t c = (l / ch_stride) % channels;
    for (std::size_t i = 0; i < group; ++i)
      op[i] = gain[c] * ((xp[i] - mean) * inv) + bias[c];
  }
  check_finite(out, "layer_norm");
  return out;
}

} // namespace rep3d
