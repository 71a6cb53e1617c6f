#include "rep3d/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "rep3d/conv3d.hpp"
#include "rep3d/kernels.hpp"

namespace rep3d::ad {

Value Tape::leaf(Tensor v, bool requires_grad) {
  nodes_.push_back(Node{std::move(v), nullptr, requires_grad});
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Tape::record(Tensor result, const std::vector<Value>& inputs, BackwardFn back) {
  bool rg = false;
  for (Value in : inputs) rg = rg || nodes_[in.id].requires_grad;
  nodes_.push_back(Node{std::move(result), rg ? std::move(back) : BackwardFn{}, rg});
  return Value{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(Value v, const Tensor& g) {
  if (!nodes_[v.id].requires_grad) return;
  if (!seeded_[v.id]) {
    grads_[v.id] = g;
    seeded_[v.id] = 1;
  } else {
    Tensor& acc = grads_[v.id];
    kernels::add(acc.data(), g.data(), acc.data(), acc.size());
  }
}

void Tape::backward(Value out, const Tensor* seed) {
  grads_.assign(nodes_.size(), Tensor());
  seeded_.assign(nodes_.size(), 0);
  const Tensor& ov = nodes_[out.id].val;
  if (seed) {
    if (!seed->same_shape(ov))
      throw std::invalid_argument("backward: seed shape mismatch");
    grads_[out.id] = *seed;
  } else {
    grads_[out.id] = Tensor::full(ov.shape(), 1.0);
  }
  seeded_[out.id] = 1;
  for (int id = out.id; id >= 0; --id) {
    if (!seeded_[id] || !nodes_[id].back) continue;
    check_finite(grads_[id], "backward");
    nodes_[id].back(*this, grads_[id]);
  }
}

const Tensor& Tape::grad(Value v) const {
  if (!nodes_[v.id].requires_grad)
    throw std::runtime_error("grad requested for a non-parameter value");
  if (v.id >= static_cast<int>(seeded_.size()) || !seeded_[v.id])
    throw std::runtime_error("no gradient reached this value; run backward first");
  return grads_[v.id];
}

bool Tape::has_grad(Value v) const {
  return v.id < static_cast<int>(seeded_.size()) && seeded_[v.id];
}

// --- primitives -------------------------------------------------------------

Value add(Tape& t, Value a, Value b) {
  Tensor r = rep3d::add(t.value(a), t.value(b));
  return t.record(std::move(r), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Value sub(Tape& t, Value a, Value b) {
  Tensor r = rep3d::sub(t.value(a), t.value(b));
  return t.record(std::move(r), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, rep3d::scale(g, -1.0));
  });
}

Value mul(Tape& t, Value a, Value b) {
  Tensor r = rep3d::mul(t.value(a), t.value(b));
  return t.record(std::move(r), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, rep3d::mul(g, t.value(b)));
    t.accumulate(b, rep3d::mul(g, t.value(a)));
  });
}

Value scale(Tape& t, Value a, double s) {
  Tensor r = rep3d::scale(t.value(a), s);
  return t.record(std::move(r), {a}, [a, s](Tape& t, const Tensor& g) {
    t.accumulate(a, rep3d::scale(g, s));
  });
}

Value vsum(Tape& t, Value a) {
  Tensor r = Tensor::scalar(rep3d::sum(t.value(a)));
  auto shape = t.value(a).shape();
  return t.record(std::move(r), {a}, [a, shape](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor::full(shape, g[0]));
  });
}

Value sigmoid(Tape& t, Value x) {
  Tensor s = sigmoid_val(t.value(x));
  Tensor saved = s;
  return t.record(std::move(s), {x}, [x, saved](Tape& t, const Tensor& g) {
    Tensor dx(saved.shape());
    for (std::size_t i = 0; i < dx.size(); ++i)
      dx[i] = g[i] * saved[i] * (1.0 - saved[i]);
    t.accumulate(x, dx);
  });
}

Value gelu(Tape& t, Value x) {
  Tensor y = gelu_val(t.value(x));
  Tensor xin = t.value(x);
  return t.record(std::move(y), {x}, [x, xin](Tape& t, const Tensor& g) {
    constexpr double c0 = 0.7978845608028654;
    constexpr double c1 = 0.044715;
    Tensor dx(xin.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double v = xin[i];
      const double tt = std::tanh(c0 * (v + c1 * v * v * v));
      const double du = c0 * (1.0 + 3.0 * c1 * v * v);
      dx[i] = g[i] * (0.5 * (1.0 + tt) + 0.5 * v * (1.0 - tt * tt) * du);
    }
    t.accumulate(x, dx);
  });
}

Value layer_norm(Tape& t, Value x, std::size_t channel_axis,
                 std::size_t group_rank, Value gain, Value bias, double eps) {
  const Tensor& xv = t.value(x);
  const Tensor& gv = t.value(gain);
  Tensor y = layer_norm_val(xv, channel_axis, group_rank, gv, t.value(bias), eps);

  const std::size_t lead_rank = xv.rank() - group_rank;
  std::size_t group = 1;
  for (std::size_t i = lead_rank; i < xv.rank(); ++i) group *= xv.dim(i);
  const std::size_t lead = xv.size() / group;
  const std::size_t channels = xv.dim(channel_axis);
  std::size_t ch_stride = 1;
  for (std::size_t i = channel_axis + 1; i < lead_rank; ++i) ch_stride *= xv.dim(i);

  Tensor xin = xv;
  return t.record(
      std::move(y), {x, gain, bias},
      [=](Tape& t, const Tensor& g) {
        const Tensor& gn = t.value(gain);
        Tensor dx(xin.shape());
        Tensor dgain({channels});
        Tensor dbias({channels});
        for (std::size_t l = 0; l < lead; ++l) {
          const double* xp = xin.data() + l * group;
          const double* gp = g.data() + l * group;
          double* dxp = dx.data() + l * group;
          const std::size_t c = (l / ch_stride) % channels;
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
          double gmean = 0.0, gxmean = 0.0;
          for (std::size_t i = 0; i < group; ++i) {
            const double xh = (xp[i] - mean) * inv;
            dgain[c] += gp[i] * xh;
            dbias[c] += gp[i];
            gmean += gp[i];
            gxmean += gp[i] * xh;
          }
          gmean /= static_cast<double>(group);
          gxmean /= static_cast<double>(group);
          for (std::size_t i = 0; i < group; ++i) {
            const double xh = (xp[i] - mean) * inv;
            dxp[i] = gn[c] * inv * (gp[i] - gmean - xh * gxmean);
          }
        }
        t.accumulate(x, dx);
        t.accumulate(gain, dgain);
        t.accumulate(bias, dbias);
      });
}

Value dwconv(Tape& t, Value x, Value w) {
  auto kern = DepthwiseKernel::from(t.value(w));
  Tensor y = dwconv3d(t.value(x), kern);
  Tensor xin = t.value(x);
  return t.record(std::move(y), {x, w}, [x, w, xin](Tape& t, const Tensor& g) {
    auto kern = DepthwiseKernel::from(t.value(w));
    Tensor dx, dw;
    dwconv3d_backward(xin, kern, g, t.requires_grad(x) ? &dx : nullptr,
                      t.requires_grad(w) ? &dw : nullptr);
    if (t.requires_grad(x)) t.accumulate(x, dx);
    if (t.requires_grad(w)) t.accumulate(w, dw);
  });
}

Value dense_conv(Tape& t, Value x, Value w, Value bias, std::size_t stride,
                 std::size_t pad) {
  Tensor y = conv3d_dense(t.value(x), t.value(w), t.value(bias), stride, pad);
  Tensor xin = t.value(x);
  return t.record(std::move(y), {x, w, bias},
                  [x, w, bias, xin, stride, pad](Tape& t, const Tensor& g) {
                    Tensor dx, dw, db;
                    conv3d_dense_backward(xin, t.value(w), g, stride, pad,
                                          t.requires_grad(x) ? &dx : nullptr,
                                          t.requires_grad(w) ? &dw : nullptr,
                                          t.requires_grad(bias) ? &db : nullptr);
                    if (t.requires_grad(x)) t.accumulate(x, dx);
                    if (t.requires_grad(w)) t.accumulate(w, dw);
                    if (t.requires_grad(bias)) t.accumulate(bias, db);
                  });
}

Value embed(Tape& t, Value w_small, std::size_t k_target) {
  auto small = DepthwiseKernel::from(t.value(w_small));
  const std::size_t ks = small.k();
  Tensor y = embed_kernel(small, k_target).weights;
  return t.record(std::move(y), {w_small}, [w_small, ks, k_target](Tape& t, const Tensor& g) {
    const std::size_t c = g.dim(0);
    const std::size_t off = (k_target - ks) / 2;
    Tensor dw({c, 1, ks, ks, ks});
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t z = 0; z < ks; ++z)
        for (std::size_t y2 = 0; y2 < ks; ++y2)
          for (std::size_t x2 = 0; x2 < ks; ++x2)
            dw[((ci * ks + z) * ks + y2) * ks + x2] =
                g[((ci * k_target + (z + off)) * k_target + (y2 + off)) * k_target +
                  (x2 + off)];
    t.accumulate(w_small, dw);
  });
}

Value upsample_nearest(Tape& t, Value x, std::size_t factor) {
  const Tensor& xv = t.value(x);
  const std::size_t n = xv.dim(0), c = xv.dim(1);
  const std::size_t d = xv.dim(2), h = xv.dim(3), w = xv.dim(4);
  const std::size_t od = d * factor, oh = h * factor, ow = w * factor;
  Tensor y({n, c, od, oh, ow});
  for (std::size_t nc = 0; nc < n * c; ++nc)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t yy = 0; yy < oh; ++yy)
        for (std::size_t xx = 0; xx < ow; ++xx)
          y[((nc * od + z) * oh + yy) * ow + xx] =
              xv[((nc * d + z / factor) * h + yy / factor) * w + xx / factor];
  auto in_shape = xv.shape();
  return t.record(std::move(y), {x}, [x, in_shape, factor](Tape& t, const Tensor& g) {
    const std::size_t n = in_shape[0], c = in_shape[1];
    const std::size_t d = in_shape[2], h = in_shape[3], w = in_shape[4];
    const std::size_t od = d * factor, oh = h * factor, ow = w * factor;
    Tensor dx(in_shape);
    for (std::size_t nc = 0; nc < n * c; ++nc)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t yy = 0; yy < oh; ++yy)
          for (std::size_t xx = 0; xx < ow; ++xx)
            dx[((nc * d + z / factor) * h + yy / factor) * w + xx / factor] +=
                g[((nc * od + z) * oh + yy) * ow + xx];
    t.accumulate(x, dx);
  });
}

Value reshape(Tape& t, Value x, std::vector<std::size_t> shape) {
  const Tensor& xv = t.value(x);
  if (shape_numel(shape) != xv.size())
    throw std::invalid_argument("reshape: element count mismatch");
  std::vector<double> data(xv.data(), xv.data() + xv.size());
  auto old_shape = xv.shape();
  Tensor y(std::move(shape), std::move(data));
  return t.record(std::move(y), {x}, [x, old_shape](Tape& t, const Tensor& g) {
    std::vector<double> data(g.data(), g.data() + g.size());
    t.accumulate(x, Tensor(old_shape, std::move(data)));
  });
}

Value prior_from_beta(Tape& t, Value beta, const Tensor& distance,
                      std::size_t channels, double beta_floor) {
  const double b = t.value(beta)[0];
  const double be = std::max(b, beta_floor);
  const std::size_t k = distance.dim(0);
  const std::size_t kvol = distance.size();
  Tensor p({channels, 1, k, k, k});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < kvol; ++i)
      p[c * kvol + i] = be / (distance[i] + be);
  Tensor dist = distance;
  const bool clamped = b < beta_floor;
  return t.record(std::move(p), {beta},
                  [beta, dist, channels, be, clamped](Tape& t, const Tensor& g) {
                    if (clamped) { // flat region of the floor: zero slope
                      t.accumulate(beta, Tensor::scalar(0.0));
                      return;
                    }
                    const std::size_t kvol = dist.size();
                    double acc = 0.0;
                    for (std::size_t c = 0; c < channels; ++c)
                      for (std::size_t i = 0; i < kvol; ++i) {
                        const double den = dist[i] + be;
                        acc += g[c * kvol + i] * dist[i] / (den * den);
                      }
                    t.accumulate(beta, Tensor::scalar(acc));
                  });
}

Value soft_dice_loss(Tape& t, Value pred, const Tensor& label, double smooth) {
  const Tensor& p = t.value(pred);
  if (!p.same_shape(label))
    throw std::invalid_argument("soft_dice_loss: shape mismatch");
  double inter = 0.0, psum = 0.0, lsum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * label[i];
    psum += p[i];
    lsum += label[i];
  }
  const double num = 2.0 * inter + smooth;
  const double den = psum + lsum + smooth;
  Tensor loss = Tensor::scalar(1.0 - num / den);
  Tensor lab = label;
  return t.record(std::move(loss), {pred},
                  [pred, lab, num, den](Tape& t, const Tensor& g) {
                    Tensor dp(lab.shape());
                    const double inv = 1.0 / den;
                    for (std::size_t i = 0; i < dp.size(); ++i)
                      dp[i] = g[0] * (num * inv * inv - 2.0 * lab[i] * inv);
                    t.accumulate(pred, dp);
                  });
}

// --- oracles ----------------------------------------------------------------

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_grad: function returned non-finite value");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
  return std::fabs(a - b) / denom;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

GradcheckReport gradcheck(const std::vector<std::pair<std::string, Tensor>>& params,
                          const LossBuilder& build, double h, double tol) {
  // analytic sweep
  Tape tape;
  std::vector<Value> vs;
  vs.reserve(params.size());
  for (const auto& [name, tensor] : params) vs.push_back(tape.param(tensor));
  Value loss = build(tape, vs);
  if (tape.value(loss).size() != 1)
    throw std::invalid_argument("gradcheck: loss must be scalar");
  tape.backward(loss);

  GradcheckReport report;
  report.tol = tol;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor analytic = tape.has_grad(vs[i]) ? tape.grad(vs[i])
                                           : Tensor(params[i].second.shape());
    auto f = [&](const Tensor& px) {
      Tape t2;
      std::vector<Value> vs2;
      for (std::size_t j = 0; j < params.size(); ++j)
        vs2.push_back(t2.constant(j == i ? px : params[j].second));
      return t2.value(build(t2, vs2))[0];
    };
    const Tensor fd = finite_diff_grad(f, params[i].second, h);
    const double err = max_rel_err(analytic, fd);
    report.rows.push_back({params[i].first, err, err < tol});
    report.pass = report.pass && err < tol;
  }
  return report;
}

} // namespace rep3d::ad
