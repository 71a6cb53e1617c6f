#include "rep3d/reparam.hpp"

#include <cmath>
#include <stdexcept>

#include "rep3d/rng.hpp"

namespace rep3d {

void CSLAConfig::validate() const {
  if (alpha_l <= 0.0 || alpha_s < 0.0)
    throw std::invalid_argument("CSLA: branch scales must be positive");
  if (lambda_l <= 0.0 || lambda_s <= 0.0)
    throw std::invalid_argument("CSLA: step sizes must be positive");
  if (k_l % 2 == 0 || k_s % 2 == 0)
    throw std::invalid_argument("CSLA: kernel sizes must be odd");
  if (k_s > k_l) throw std::invalid_argument("CSLA: K_S must not exceed K_L");
}

AdamState AdamState::like(const Tensor& p, AdamConfig cfg) {
  return AdamState{Tensor(p.shape()), Tensor(p.shape()), 0, cfg};
}

Tensor adamw_step(const Tensor& p, const Tensor& grad, AdamState& st, double lr) {
  if (!p.same_shape(grad) || !p.same_shape(st.m))
    throw std::invalid_argument("adamw_step: shape mismatch");
  st.step += 1;
  const double b1 = st.cfg.beta1, b2 = st.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  Tensor out(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1.0 - b1) * grad[i];
    st.v[i] = b2 * st.v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    out[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + st.cfg.eps) +
                          st.cfg.weight_decay * p[i]);
  }
  check_finite(out, "adamw_step");
  return out;
}

CSLAState CSLAState::init(const CSLAConfig& cfg, std::size_t channels,
                          std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  CSLAState s;
  const double std_l = 1.0 / std::sqrt(static_cast<double>(cfg.k_l * cfg.k_l * cfg.k_l));
  const double std_s = 1.0 / std::sqrt(static_cast<double>(cfg.k_s * cfg.k_s * cfg.k_s));
  s.w_l = scale(rng.normal({channels, 1, cfg.k_l, cfg.k_l, cfg.k_l}), std_l);
  s.w_s = scale(rng.normal({channels, 1, cfg.k_s, cfg.k_s, cfg.k_s}), std_s);
  AdamConfig ac;
  ac.weight_decay = 0.0; // equivalence analyses assume plain adaptive updates
  s.adam_l = AdamState::like(s.w_l, ac);
  s.adam_s = AdamState::like(s.w_s, ac);
  return s;
}

Tensor csla_forward(const Tensor& x, const CSLAState& s, const CSLAConfig& cfg) {
  cfg.validate();
  const Tensor y_l = dwconv3d(x, DepthwiseKernel::from(s.w_l));
  const Tensor y_s = dwconv3d(x, DepthwiseKernel::from(s.w_s));
  return axpy(scale(y_l, cfg.alpha_l), y_s, cfg.alpha_s);
}

DepthwiseKernel merge_so(const CSLAState& s, const CSLAConfig& cfg) {
  const Tensor embedded = embed_kernel(DepthwiseKernel::from(s.w_s), cfg.k_l).weights;
  return DepthwiseKernel::from(axpy(scale(s.w_l, cfg.alpha_l), embedded, cfg.alpha_s));
}

BranchGrads csla_branch_grads(const Tensor& x, const CSLAState& s,
                              const CSLAConfig& cfg, const CslaLossFn& loss) {
  ad::Tape t;
  ad::Value vx = t.constant(x);
  ad::Value wl = t.param(s.w_l);
  ad::Value ws = t.param(s.w_s);
  ad::Value y = ad::add(t, ad::scale(t, ad::dwconv(t, vx, wl), cfg.alpha_l),
                        ad::scale(t, ad::dwconv(t, vx, ws), cfg.alpha_s));
  ad::Value l = loss(t, y);
  t.backward(l);
  return BranchGrads{t.grad(wl), t.grad(ws)};
}

void branch_sgd_step(CSLAState& s, const BranchGrads& g, const CSLAConfig& cfg) {
  if (!g.d_w_l.same_shape(s.w_l) || !g.d_w_s.same_shape(s.w_s))
    throw std::invalid_argument("branch_sgd_step: missing or mismatched gradient");
  s.w_l = axpy(s.w_l, g.d_w_l, -cfg.lambda_l);
  s.w_s = axpy(s.w_s, g.d_w_s, -cfg.lambda_s);
  s.step += 1;
}

void branch_adamw_step(CSLAState& s, const BranchGrads& g, double lr) {
  s.w_l = adamw_step(s.w_l, g.d_w_l, s.adam_l, lr);
  s.w_s = adamw_step(s.w_s, g.d_w_s, s.adam_s, lr);
  s.step += 1;
}

DepthwiseKernel composed_update_oracle(const Tensor& x, CSLAState s,
                                       const CSLAConfig& cfg,
                                       const CslaLossFn& loss) {
  const BranchGrads g = csla_branch_grads(x, s, cfg, loss);
  branch_sgd_step(s, g, cfg);
  return merge_so(s, cfg);
}

LRField effective_lr_field(const CSLAConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.k_l;
  const bool squared = cfg.field_convention == FieldConvention::DerivedAlphaSquared;
  const double coef_l =
      cfg.lambda_l * (squared ? cfg.alpha_l * cfg.alpha_l : cfg.alpha_l);
  const double coef_s =
      cfg.lambda_s * (squared ? cfg.alpha_s * cfg.alpha_s : cfg.alpha_s);
  const std::size_t off = (k - cfg.k_s) / 2;
  Tensor f({k, k, k});
  for (std::size_t z = 0; z < k; ++z)
    for (std::size_t y = 0; y < k; ++y)
      for (std::size_t x = 0; x < k; ++x) {
        const bool central = z >= off && z < off + cfg.k_s && y >= off &&
                             y < off + cfg.k_s && x >= off && x < off + cfg.k_s;
        f[(z * k + y) * k + x] = coef_l + (central ? coef_s : 0.0);
      }
  return LRField{std::move(f), cfg.k_s};
}

DepthwiseKernel so_grad_reparam_step(const DepthwiseKernel& w_prime,
                                     const Tensor& grad, const LRField& field) {
  if (!grad.same_shape(w_prime.weights))
    throw std::invalid_argument("so_grad_reparam_step: gradient shape mismatch");
  const std::size_t c = w_prime.channels();
  const std::size_t kvol = field.field.size();
  Tensor out(w_prime.weights.shape());
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < kvol; ++i)
      out[ci * kvol + i] =
          w_prime.weights[ci * kvol + i] - field.field[i] * grad[ci * kvol + i];
  return DepthwiseKernel::from(std::move(out));
}

ScaleInvarianceReport adam_scale_invariance_check(const std::vector<double>& grads,
                                                  double alpha, double eps,
                                                  double lr) {
  AdamConfig ac;
  ac.eps = eps;
  ac.weight_decay = 0.0;
  AdamState chain_u = AdamState::like(Tensor::scalar(0.0), ac);
  AdamState chain_s = AdamState::like(Tensor::scalar(0.0), ac);
  Tensor wu = Tensor::scalar(0.0), ws = Tensor::scalar(0.0);
  ScaleInvarianceReport report;
  for (double g : grads) {
    const Tensor wu2 = adamw_step(wu, Tensor::scalar(g), chain_u, lr);
    const Tensor ws2 = adamw_step(ws, Tensor::scalar(alpha * g), chain_s, lr);
    const double du = wu2[0] - wu[0];
    const double ds = ws2[0] - ws[0];
    wu = wu2;
    ws = ws2;
    report.steps += 1;
    if (std::fabs(du) < 1e-300) continue; // underflow guard
    report.max_rel_deviation =
        std::max(report.max_rel_deviation, std::fabs(ds - du) / std::fabs(du));
  }
  return report;
}

CentralPeripheralReport central_peripheral_step_ratio(const CSLAConfig& cfg,
                                                      std::size_t channels,
                                                      std::uint64_t seed,
                                                      int steps, double lr) {
  cfg.validate();
  CSLAState s = CSLAState::init(cfg, channels, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const Tensor x = rng.normal({1, channels, 8, 8, 8});
  const Tensor target = rng.normal(x.shape());
  const Tensor w0 = merge_so(s, cfg).weights;

  auto loss = [&](ad::Tape& t, ad::Value y) {
    ad::Value diff = ad::sub(t, y, t.constant(target));
    return ad::scale(t, ad::vsum(t, ad::mul(t, diff, diff)),
                     1.0 / static_cast<double>(target.size()));
  };
  for (int i = 0; i < steps; ++i) {
    const BranchGrads g = csla_branch_grads(x, s, cfg, loss);
    branch_adamw_step(s, g, lr);
  }
  const Tensor w1 = merge_so(s, cfg).weights;

  CentralPeripheralReport report;
  if (cfg.k_s == cfg.k_l) {
    report.full_support = true;
    return report;
  }
  const std::size_t k = cfg.k_l;
  const std::size_t kvol = k * k * k;
  const std::size_t off = (k - cfg.k_s) / 2;
  double csum = 0.0, psum = 0.0;
  std::size_t cn = 0, pn = 0;
  for (std::size_t ci = 0; ci < channels; ++ci)
    for (std::size_t z = 0; z < k; ++z)
      for (std::size_t y = 0; y < k; ++y)
        for (std::size_t x2 = 0; x2 < k; ++x2) {
          const std::size_t idx = ci * kvol + (z * k + y) * k + x2;
          const double step = std::fabs(w1[idx] - w0[idx]);
          const bool central = z >= off && z < off + cfg.k_s && y >= off &&
                               y < off + cfg.k_s && x2 >= off && x2 < off + cfg.k_s;
          if (central) {
            csum += step;
            ++cn;
          } else {
            psum += step;
            ++pn;
          }
        }
  report.central_mean_step = csum / static_cast<double>(cn);
  report.peripheral_mean_step = psum / static_cast<double>(pn);
  report.ratio = report.central_mean_step /
                 std::max(report.peripheral_mean_step, 1e-300);
  return report;
}

} // namespace rep3d
