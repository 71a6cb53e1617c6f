#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rep3d/tensor.hpp"

namespace rep3d::ad {

class Tape;

// Handle into a tape. Values are created in topological order by
// construction; backward walks ids in reverse, so fan-out gradients always
// accumulate in the same (node-id) order and runs are bitwise reproducible.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
public:
  Value leaf(Tensor v, bool requires_grad = false);
  Value param(Tensor v) { return leaf(std::move(v), true); }
  Value constant(Tensor v) { return leaf(std::move(v), false); }

  const Tensor& value(Value v) const { return nodes_[v.id].val; }
  bool requires_grad(Value v) const { return nodes_[v.id].requires_grad; }

  // Reverse sweep from `out`. Seeds with ones when no seed is given
  // (scalar outputs). Grads of previous sweeps are cleared.
  void backward(Value out, const Tensor* seed = nullptr);

  const Tensor& grad(Value v) const;
  bool has_grad(Value v) const;

  // op-construction interface
  using BackwardFn = std::function<void(Tape&, const Tensor& gout)>;
  Value record(Tensor result, const std::vector<Value>& inputs, BackwardFn back);
  void accumulate(Value v, const Tensor& g);

  std::size_t node_count() const { return nodes_.size(); }

private:
  struct Node {
    Tensor val;
    BackwardFn back;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> seeded_;
};

// --- differentiable primitives -------------------------------------------

Value add(Tape& t, Value a, Value b);
Value sub(Tape& t, Value a, Value b);
Value mul(Tape& t, Value a, Value b);
Value scale(Tape& t, Value a, double s);
Value vsum(Tape& t, Value a); // scalar [1]
Value sigmoid(Tape& t, Value x);
Value gelu(Tape& t, Value x);

// See layer_norm_val for the grouping convention.
Value layer_norm(Tape& t, Value x, std::size_t channel_axis,
                 std::size_t group_rank, Value gain, Value bias,
                 double eps = 1e-6);

// Depthwise conv, "same" padding. w holds a C x 1 x K^3 bank.
Value dwconv(Tape& t, Value x, Value w);

// Dense strided conv (toy encoder stem / downsample / head).
Value dense_conv(Tape& t, Value x, Value w, Value bias, std::size_t stride,
                 std::size_t pad);

// Kernel-grid zero-padding: centers a C x 1 x Ks^3 bank in a K^3 field.
Value embed(Tape& t, Value w_small, std::size_t k_target);

Value upsample_nearest(Tape& t, Value x, std::size_t factor);

// Same data, new shape (numel must match).
Value reshape(Tape& t, Value x, std::vector<std::size_t> shape);

// P = beta_eff / (f_d + beta_eff) with beta_eff = max(beta, beta_floor),
// broadcast over channels. beta is a 1-element value; f_d a constant K^3
// distance map. Gradient flows to beta only (zero below the floor).
Value prior_from_beta(Tape& t, Value beta, const Tensor& distance,
                      std::size_t channels, double beta_floor);

// 1 - (2*sum(p*l) + smooth) / (sum(p) + sum(l) + smooth), scalar.
Value soft_dice_loss(Tape& t, Value pred, const Tensor& label,
                     double smooth = 1e-5);

// --- oracles and checks ----------------------------------------------------

// Central differences (f(x+h*e_i) - f(x-h*e_i)) / (2h) per element.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h = 1e-5);

// |a-b| / max(|a|, |b|, 1e-8)
double rel_err(double a, double b);
double max_rel_err(const Tensor& a, const Tensor& b);

struct GradcheckRow {
  std::string name;
  double max_rel_err;
  bool pass;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  double tol = 1e-6;
  bool pass = true;
};

// Builds the scalar loss from the given parameter values; called once for
// the analytic sweep and O(numel) times on perturbed copies for the
// finite-difference oracle.
using LossBuilder =
    std::function<Value(Tape&, const std::vector<Value>& params)>;

GradcheckReport gradcheck(const std::vector<std::pair<std::string, Tensor>>& params,
                          const LossBuilder& build, double h = 1e-5,
                          double tol = 1e-6);

} // namespace rep3d::ad
