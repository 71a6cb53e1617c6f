#include "rep3d/conv3d.hpp"

#include <stdexcept>

#include "rep3d/kernels.hpp"

namespace rep3d {

namespace {

void require_kernel_shape(const Tensor& w) {
  if (w.rank() != 5 || w.dim(1) != 1)
    throw std::invalid_argument("depthwise kernel must have shape Cx1xKxKxK, got " +
                                shape_str(w.shape()));
  const std::size_t k = w.dim(2);
  if (w.dim(3) != k || w.dim(4) != k)
    throw std::invalid_argument("depthwise kernel must be cubic");
  if (k % 2 == 0) throw std::invalid_argument("kernel size must be odd");
}

void require_volume(const Tensor& x) {
  if (x.rank() != 5)
    throw std::invalid_argument("volume batch must have shape NxCxDxHxW, got " +
                                shape_str(x.shape()));
}

// Zero-pads one DxHxW slab by (k-1)/2 on every side.
std::vector<double> pad_slab(const double* x, std::size_t d, std::size_t h,
                             std::size_t w, std::size_t k) {
  const std::size_t p = (k - 1) / 2;
  const std::size_t dp = d + k - 1, hp = h + k - 1, wp = w + k - 1;
  std::vector<double> out(dp * hp * wp, 0.0);
  for (std::size_t z = 0; z < d; ++z)
    for (std::size_t y = 0; y < h; ++y) {
      double* dst = out.data() + ((z + p) * hp + (y + p)) * wp + p;
      const double* src = x + (z * h + y) * w;
      for (std::size_t i = 0; i < w; ++i) dst[i] = src[i];
    }
  return out;
}

} // namespace

DepthwiseKernel DepthwiseKernel::from(Tensor weights) {
  require_kernel_shape(weights);
  return DepthwiseKernel{std::move(weights)};
}

DepthwiseKernel DepthwiseKernel::delta(std::size_t channels, std::size_t k) {
  if (k % 2 == 0) throw std::invalid_argument("kernel size must be odd");
  Tensor w({channels, 1, k, k, k});
  const std::size_t c = (k - 1) / 2;
  for (std::size_t ch = 0; ch < channels; ++ch)
    w[ch * k * k * k + (c * k + c) * k + c] = 1.0;
  return DepthwiseKernel{std::move(w)};
}

Tensor dwconv3d(const Tensor& x, const DepthwiseKernel& kern) {
  require_volume(x);
  require_kernel_shape(kern.weights);
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t d = x.dim(2), h = x.dim(3), w = x.dim(4);
  if (c != kern.channels())
    throw std::invalid_argument("dwconv3d: channel mismatch");
  const std::size_t k = kern.k();
  const std::size_t slab = d * h * w;
  const std::size_t kvol = k * k * k;

  Tensor out(x.shape());
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const auto xpad = pad_slab(x.data() + (ni * c + ci) * slab, d, h, w, k);
      kernels::corr3d(xpad.data(), kern.weights.data() + ci * kvol,
                      out.data() + (ni * c + ci) * slab, d, h, w, k);
    }
  check_finite(out, "dwconv3d");
  return out;
}

void dwconv3d_backward(const Tensor& x, const DepthwiseKernel& kern,
                       const Tensor& upstream, Tensor* dx, Tensor* dw) {
  require_volume(x);
  require_kernel_shape(kern.weights);
  if (!upstream.same_shape(x))
    throw std::invalid_argument("dwconv3d_backward: upstream shape mismatch");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const std::size_t k = kern.k();
  const std::size_t slab = d * h * w;
  const std::size_t kvol = k * k * k;

  if (dx) *dx = Tensor(x.shape());
  if (dw) *dw = Tensor(kern.weights.shape());

  std::vector<double> wrev(kvol);
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* up = upstream.data() + (ni * c + ci) * slab;
      if (dx) {
        // dX is the correlation of the upstream gradient with the
        // axis-reflected kernel (the true adjoint of cross-correlation).
        const double* wk = kern.weights.data() + ci * kvol;
        for (std::size_t i = 0; i < kvol; ++i) wrev[i] = wk[kvol - 1 - i];
        const auto uppad = pad_slab(up, d, h, w, k);
        kernels::corr3d(uppad.data(), wrev.data(),
                        dx->data() + (ni * c + ci) * slab, d, h, w, k);
      }
      if (dw) {
        const auto xpad = pad_slab(x.data() + (ni * c + ci) * slab, d, h, w, k);
        kernels::corr3d_taps(xpad.data(), up, dw->data() + ci * kvol, d, h, w, k);
      }
    }
}

DepthwiseKernel embed_kernel(const DepthwiseKernel& small, std::size_t k_target) {
  const std::size_t ks = small.k();
  if (k_target % 2 == 0) throw std::invalid_argument("embed_kernel: target size must be odd");
  if (ks > k_target) throw std::invalid_argument("embed_kernel: source larger than target");
  if (ks == k_target) return small;
  const std::size_t c = small.channels();
  const std::size_t off = (k_target - ks) / 2;
  Tensor out({c, 1, k_target, k_target, k_target});
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t z = 0; z < ks; ++z)
      for (std::size_t y = 0; y < ks; ++y)
        for (std::size_t xk = 0; xk < ks; ++xk)
          out[((ci * k_target + (z + off)) * k_target + (y + off)) * k_target + (xk + off)] =
              small.weights[((ci * ks + z) * ks + y) * ks + xk];
  return DepthwiseKernel{std::move(out)};
}

Tensor conv3d_dense(const Tensor& x, const Tensor& w, const Tensor& bias,
                    std::size_t stride, std::size_t pad) {
  require_volume(x);
  if (w.rank() != 5) throw std::invalid_argument("conv3d_dense: bad weight rank");
  const std::size_t n = x.dim(0), cin = x.dim(1);
  const std::size_t d = x.dim(2), h = x.dim(3), wi = x.dim(4);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin) throw std::invalid_argument("conv3d_dense: channel mismatch");
  if (bias.size() != cout) throw std::invalid_argument("conv3d_dense: bias length");
  const std::size_t od = (d + 2 * pad - k) / stride + 1;
  const std::size_t oh = (h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (wi + 2 * pad - k) / stride + 1;

  Tensor out({n, cout, od, oh, ow});
  auto xat = [&](std::size_t ni, std::size_t ci, long z, long y, long xx) -> double {
    if (z < 0 || y < 0 || xx < 0 || z >= (long)d || y >= (long)h || xx >= (long)wi) return 0.0;
    return x[(((ni * cin + ci) * d + z) * h + y) * wi + xx];
  };
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oz = 0; oz < od; ++oz)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            double acc = bias[co];
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t kz = 0; kz < k; ++kz)
                for (std::size_t ky = 0; ky < k; ++ky)
                  for (std::size_t kx = 0; kx < k; ++kx)
                    acc += xat(ni, ci, (long)(oz * stride + kz) - (long)pad,
                               (long)(oy * stride + ky) - (long)pad,
                               (long)(ox * stride + kx) - (long)pad) *
                           w[(((co * cin + ci) * k + kz) * k + ky) * k + kx];
            out[(((ni * cout + co) * od + oz) * oh + oy) * ow + ox] = acc;
          }
  check_finite(out, "conv3d_dense");
  return out;
}

void conv3d_dense_backward(const Tensor& x, const Tensor& w,
                           const Tensor& upstream, std::size_t stride,
                           std::size_t pad, Tensor* dx, Tensor* dw,
                           Tensor* dbias) {
  const std::size_t n = x.dim(0), cin = x.dim(1);
  const std::size_t d = x.dim(2), h = x.dim(3), wi = x.dim(4);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const std::size_t od = upstream.dim(2), oh = upstream.dim(3), ow = upstream.dim(4);

  if (dx) *dx = Tensor(x.shape());
  if (dw) *dw = Tensor(w.shape());
  if (dbias) *dbias = Tensor({cout});

  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oz = 0; oz < od; ++oz)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const double g = upstream[(((ni * cout + co) * od + oz) * oh + oy) * ow + ox];
            if (dbias) (*dbias)[co] += g;
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t kz = 0; kz < k; ++kz)
                for (std::size_t ky = 0; ky < k; ++ky)
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const long z = (long)(oz * stride + kz) - (long)pad;
                    const long y = (long)(oy * stride + ky) - (long)pad;
                    const long xx = (long)(ox * stride + kx) - (long)pad;
                    if (z < 0 || y < 0 || xx < 0 || z >= (long)d || y >= (long)h ||
                        xx >= (long)wi)
                      continue;
                    const std::size_t xi = (((ni * cin + ci) * d + z) * h + y) * wi + xx;
                    const std::size_t wiw = (((co * cin + ci) * k + kz) * k + ky) * k + kx;
                    if (dw) (*dw)[wiw] += g * x[xi];
                    if (dx) (*dx)[xi] += g * w[wiw];
                  }
          }
}

} // namespace rep3d
