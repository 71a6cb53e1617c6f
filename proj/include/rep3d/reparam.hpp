#pragma once

#include <cstdint>
#include <functional>

#include "rep3d/autodiff.hpp"
#include "rep3d/conv3d.hpp"
#include "rep3d/tensor.hpp"

namespace rep3d {

enum class Optimizer { Sgd, AdamW };

// Per-offset step sizes on the merged kernel. The derived convention is
// what substituting the chain-rule branch gradients into the combined
// update actually yields (alpha enters squared); the as-written convention
// keeps the single alpha factor the field is usually quoted with. They
// coincide at alpha = 1, and only the derived form reproduces the two-branch
// trajectory when alpha != 1.
enum class FieldConvention { DerivedAlphaSquared, AsWrittenEq11 };

struct CSLAConfig {
  double alpha_l = 1.0;
  double alpha_s = 1.0;
  double lambda_l = 0.0002; // best SGD large-branch rate from the ablation
  double lambda_s = 0.0006; // best SGD small-branch rate
  std::size_t k_l = 7;
  std::size_t k_s = 3;
  Optimizer optimizer = Optimizer::Sgd;
  FieldConvention field_convention = FieldConvention::DerivedAlphaSquared;

  void validate() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.08;
};

struct AdamState {
  Tensor m, v;
  long step = 0;
  AdamConfig cfg;

  static AdamState like(const Tensor& p, AdamConfig cfg = {});
};

// Decoupled weight decay, standard bias correction
// m_hat = m/(1-beta1^t), v_hat = v/(1-beta2^t).
Tensor adamw_step(const Tensor& p, const Tensor& grad, AdamState& st, double lr);

struct CSLAState {
  Tensor w_l; // C x 1 x K_L^3
  Tensor w_s; // C x 1 x K_S^3
  long step = 0;
  AdamState adam_l, adam_s; // per-branch moments, never merged

  static CSLAState init(const CSLAConfig& cfg, std::size_t channels,
                        std::uint64_t seed);
};

// alpha_L * (x * W_L) + alpha_S * (x * W_S), both branches "same"-padded.
Tensor csla_forward(const Tensor& x, const CSLAState& s, const CSLAConfig& cfg);

// W' = alpha_L * W_L + alpha_S * embed(W_S, K_L)
DepthwiseKernel merge_so(const CSLAState& s, const CSLAConfig& cfg);

struct BranchGrads {
  Tensor d_w_l, d_w_s;
};

// Scalar loss of the CSLA output, used by the update oracles.
using CslaLossFn = std::function<ad::Value(ad::Tape&, ad::Value y)>;

// Exact branch gradients of loss(csla_forward(x)).
BranchGrads csla_branch_grads(const Tensor& x, const CSLAState& s,
                              const CSLAConfig& cfg, const CslaLossFn& loss);

// W_L -= lambda_L * dW_L; W_S -= lambda_S * dW_S.
void branch_sgd_step(CSLAState& s, const BranchGrads& g, const CSLAConfig& cfg);
void branch_adamw_step(CSLAState& s, const BranchGrads& g, double lr);

// Ground truth for single-operator training: one branch SGD step followed
// by the merge. Returns W'(t+1).
DepthwiseKernel composed_update_oracle(const Tensor& x, CSLAState s,
                                       const CSLAConfig& cfg,
                                       const CslaLossFn& loss);

struct LRField {
  Tensor field; // K_L^3 of per-offset step sizes
  std::size_t k_s; // support size of the central region
};

LRField effective_lr_field(const CSLAConfig& cfg);

// W' - field (elementwise, broadcast over channels) * grad
DepthwiseKernel so_grad_reparam_step(const DepthwiseKernel& w_prime,
                                     const Tensor& grad, const LRField& field);

struct ScaleInvarianceReport {
  double max_rel_deviation = 0.0;
  int steps = 0;
};

// Runs two Adam chains on gradient streams g_t and alpha * g_t and reports
// the worst per-step relative deviation between the two updates. Weight
// decay is off; the cancellation argument concerns the adaptive ratio only.
ScaleInvarianceReport adam_scale_invariance_check(const std::vector<double>& grads,
                                                  double alpha, double eps,
                                                  double lr = 1e-4);

struct CentralPeripheralReport {
  double central_mean_step = 0.0;
  double peripheral_mean_step = 0.0;
  double ratio = 0.0;
  bool full_support = false; // K_S == K_L: no peripheral region exists
};

// Trains a CSLA block with per-branch AdamW against a random regression
// target and compares the mean merged-kernel movement on the small-kernel
// support vs its complement.
CentralPeripheralReport central_peripheral_step_ratio(const CSLAConfig& cfg,
                                                      std::size_t channels,
                                                      std::uint64_t seed,
                                                      int steps, double lr);

} // namespace rep3d
