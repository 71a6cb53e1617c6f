#include "doctest.h"

#include <cmath>

#include "rep3d/autodiff.hpp"
#include "rep3d/conv3d.hpp"
#include "rep3d/reparam.hpp"
#include "rep3d/rng.hpp"
#include "rep3d/tensor.hpp"

using namespace rep3d;

namespace {

CslaLossFn mse_loss(const Tensor& target) {
  return [target](ad::Tape& t, ad::Value y) {
    ad::Value d = ad::sub(t, y, t.constant(target));
    return ad::vsum(t, ad::mul(t, d, d));
  };
}

Tensor merged_grad(const Tensor& x, const DepthwiseKernel& w_prime,
                   const CslaLossFn& loss) {
  ad::Tape t;
  ad::Value w = t.param(w_prime.weights);
  t.backward(loss(t, ad::dwconv(t, t.constant(x), w)));
  return t.grad(w);
}

} // namespace

TEST_SUITE("reparam") {

TEST_CASE("forward merge equivalence across sizes and scales") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
    for (std::size_t k_l : {5u, 7u})
      for (double a_l : {0.5, 2.0}) {
        CSLAConfig cfg;
        cfg.k_l = k_l;
        cfg.k_s = 3;
        cfg.alpha_l = a_l;
        cfg.alpha_s = 1.0;
        CSLAState s = CSLAState::init(cfg, 2, seed);
        Rng rng(seed ^ 77);
        const Tensor x = rng.normal({1, 2, 8, 8, 8});
        const double diff =
            max_abs_diff(csla_forward(x, s, cfg), dwconv3d(x, merge_so(s, cfg)));
        INFO("seed ", seed, " k_l ", k_l, " alpha_l ", a_l);
        CHECK(diff < 1e-12);
      }
}

TEST_CASE("effective lr field values at defaults") {
  CSLAConfig cfg; // alpha 1, lambda 0.0002 / 0.0006, K 7 / 3
  const LRField f = effective_lr_field(cfg);
  REQUIRE(f.field.size() == 343);
  CHECK(f.field[0] == 0.0002);                  // peripheral
  CHECK(f.field[(3 * 7 + 3) * 7 + 3] == 0.0002 + 0.0006); // central
  // derived convention squares alpha
  cfg.alpha_l = 2.0;
  CHECK(effective_lr_field(cfg).field[0] == 0.0008);
  cfg.field_convention = FieldConvention::AsWrittenEq11;
  CHECK(effective_lr_field(cfg).field[0] == 0.0004);
}

TEST_CASE("ten-step trajectory equivalence (derived-alpha-squared field)") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CSLAConfig cfg;
    cfg.alpha_l = 1.5;
    cfg.alpha_s = 0.5;
    CSLAState s = CSLAState::init(cfg, 2, seed);
    Rng rng(seed ^ 99);
    const Tensor x = rng.normal({1, 2, 8, 8, 8});
    const CslaLossFn loss = mse_loss(rng.normal({1, 2, 8, 8, 8}));
    const LRField field = effective_lr_field(cfg);
    DepthwiseKernel w_prime = merge_so(s, cfg);
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      w_prime = so_grad_reparam_step(w_prime, merged_grad(x, w_prime, loss), field);
      branch_sgd_step(s, csla_branch_grads(x, s, cfg, loss), cfg);
      worst = std::max(worst,
                       max_abs_diff(w_prime.weights, merge_so(s, cfg).weights));
    }
    INFO("seed ", seed);
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("as-written field diverges from the branch trajectory when alpha != 1") {
  CSLAConfig cfg;
  cfg.alpha_l = 2.0;
  cfg.field_convention = FieldConvention::AsWrittenEq11;
  CSLAState s = CSLAState::init(cfg, 1, 5);
  Rng rng(123);
  const Tensor x = rng.normal({1, 1, 8, 8, 8});
  const CslaLossFn loss = mse_loss(rng.normal({1, 1, 8, 8, 8}));
  const LRField field = effective_lr_field(cfg);
  DepthwiseKernel w_prime = merge_so(s, cfg);
  w_prime = so_grad_reparam_step(w_prime, merged_grad(x, w_prime, loss), field);
  branch_sgd_step(s, csla_branch_grads(x, s, cfg, loss), cfg);
  CHECK(max_abs_diff(w_prime.weights, merge_so(s, cfg).weights) > 1e-10);
}

TEST_CASE("alpha_s = 0 degenerates to a uniform field") {
  CSLAConfig cfg;
  cfg.alpha_s = 0.0;
  const LRField f = effective_lr_field(cfg);
  CHECK(f.field[0] == f.field[171]); // corner == center
}

TEST_CASE("one composed step matches the oracle") {
  CSLAConfig cfg;
  CSLAState s = CSLAState::init(cfg, 2, 3);
  Rng rng(31);
  const Tensor x = rng.normal({1, 2, 8, 8, 8});
  const CslaLossFn loss = mse_loss(rng.normal({1, 2, 8, 8, 8}));
  const DepthwiseKernel oracle = composed_update_oracle(x, s, cfg, loss);
  DepthwiseKernel w_prime = merge_so(s, cfg);
  w_prime = so_grad_reparam_step(w_prime, merged_grad(x, w_prime, loss),
                                 effective_lr_field(cfg));
  CHECK(max_abs_diff(w_prime.weights, oracle.weights) < 1e-12);
}

TEST_CASE("adamw step matches a hand-rolled reference") {
  const Tensor p = Tensor::of({1.0, -2.0});
  const Tensor g = Tensor::of({0.5, 0.25});
  AdamConfig cfg;
  AdamState st = AdamState::like(p, cfg);
  const double lr = 1e-3;
  const Tensor p1 = adamw_step(p, g, st, lr);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = (1 - cfg.beta1) * g[i] / (1 - cfg.beta1);
    const double v = (1 - cfg.beta2) * g[i] * g[i] / (1 - cfg.beta2);
    const double ref = p[i] - lr * (m / (std::sqrt(v) + cfg.eps) +
                                    cfg.weight_decay * p[i]);
    CHECK(p1[i] == doctest::Approx(ref).epsilon(1e-14));
  }
}

TEST_CASE("adam scale cancellation, and the epsilon caveat") {
  Rng rng(8);
  std::vector<double> grads(100);
  for (auto& g : grads) g = rng.next_normal();
  const auto tight = adam_scale_invariance_check(grads, 10.0, 1e-8);
  CHECK(tight.max_rel_deviation < 1e-6);
  const auto loose = adam_scale_invariance_check(grads, 10.0, 1e-2);
  CHECK(loose.max_rel_deviation > 1e-3);
}

TEST_CASE("adamw central region moves faster than the periphery") {
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CSLAConfig cfg;
    cfg.optimizer = Optimizer::AdamW;
    const auto rep = central_peripheral_step_ratio(cfg, 1, seed, 20, 1e-3);
    REQUIRE_FALSE(rep.full_support);
    if (rep.ratio > 1.0) ++wins;
  }
  CHECK(wins >= 9);
}

TEST_CASE("config validation") {
  CSLAConfig cfg;
  cfg.k_s = 4;
  CHECK_THROWS(cfg.validate());
  cfg.k_s = 9; // larger than k_l
  CHECK_THROWS(cfg.validate());
}

} // TEST_SUITE
