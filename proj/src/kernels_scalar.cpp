#include "rep3d/kernels.hpp"

namespace rep3d::kernels::scalar {

void add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const double* a, double s, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void axpy(const double* a, const double* b, double s, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + s * b[i];
}

void corr3d(const double* xpad, const double* w, double* out,
            std::size_t d, std::size_t h, std::size_t wd, std::size_t k) {
  const std::size_t hp = h + k - 1;
  const std::size_t wp = wd + k - 1;
  for (std::size_t od = 0; od < d; ++od)
    for (std::size_t oh = 0; oh < h; ++oh)
      for (std::size_t ow = 0; ow < wd; ++ow) {
        double acc = 0.0;
        for (std::size_t kd = 0; kd < k; ++kd)
          for (std::size_t kh = 0; kh < k; ++kh) {
            const double* row = xpad + ((od + kd) * hp + (oh + kh)) * wp + ow;
            const double* wr = w + (kd * k + kh) * k;
            for (std::size_t kw = 0; kw < k; ++kw) acc += row[kw] * wr[kw];
          }
        out[(od * h + oh) * wd + ow] = acc;
      }
}

void corr3d_taps(const double* xpad, const double* up, double* dw,
                 std::size_t d, std::size_t h, std::size_t wd, std::size_t k) {
  const std::size_t hp = h + k - 1;
  const std::size_t wp = wd + k - 1;
  for (std::size_t kd = 0; kd < k; ++kd)
    for (std::size_t kh = 0; kh < k; ++kh)
      for (std::size_t kw = 0; kw < k; ++kw) {
        double acc = 0.0;
        for (std::size_t od = 0; od < d; ++od)
          for (std::size_t oh = 0; oh < h; ++oh) {
            const double* xr = xpad + ((od + kd) * hp + (oh + kh)) * wp + kw;
            const double* ur = up + (od * h + oh) * wd;
            for (std::size_t ow = 0; ow < wd; ++ow) acc += ur[ow] * xr[ow];
          }
        dw[(kd * k + kh) * k + kw] += acc;
      }
}

} // namespace rep3d::kernels::scalar
