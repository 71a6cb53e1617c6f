#include "rep3d/kernels.hpp"

#if defined(__AVX2__)
#include <immintrin.h>
#endif

namespace rep3d::kernels::avx2 {

#if defined(__AVX2__)

bool available() { return __builtin_cpu_supports("avx2"); }

void add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const double* a, double s, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
  for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy(const double* a, const double* b, double s, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    // mul then add, never fused: must match the scalar path bitwise
    __m256d t = _mm256_mul_pd(vs, _mm256_loadu_pd(b + i));
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), t));
  }
  for (; i < n; ++i) out[i] = a[i] + s * b[i];
}

// Four output voxels per vector along the innermost axis; every lane walks
// the k^3 taps in the same order as the scalar reference, so per-voxel
// rounding is identical.
void corr3d(const double* xpad, const double* w, double* out,
            std::size_t d, std::size_t h, std::size_t wd, std::size_t k) {
  const std::size_t hp = h + k - 1;
  const std::size_t wp = wd + k - 1;
  for (std::size_t od = 0; od < d; ++od)
    for (std::size_t oh = 0; oh < h; ++oh) {
      std::size_t ow = 0;
      for (; ow + 4 <= wd; ow += 4) {
        __m256d acc = _mm256_setzero_pd();
        for (std::size_t kd = 0; kd < k; ++kd)
          for (std::size_t kh = 0; kh < k; ++kh) {
            const double* row = xpad + ((od + kd) * hp + (oh + kh)) * wp + ow;
            const double* wr = w + (kd * k + kh) * k;
            for (std::size_t kw = 0; kw < k; ++kw) {
              __m256d t = _mm256_mul_pd(_mm256_loadu_pd(row + kw), _mm256_set1_pd(wr[kw]));
              acc = _mm256_add_pd(acc, t);
            }
          }
        _mm256_storeu_pd(out + (od * h + oh) * wd + ow, acc);
      }
      for (; ow < wd; ++ow) {
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
}

// Four adjacent kw taps per vector; each lane reduces over output voxels in
// the scalar (od, oh, ow) order.
void corr3d_taps(const double* xpad, const double* up, double* dw,
                 std::size_t d, std::size_t h, std::size_t wd, std::size_t k) {
  const std::size_t hp = h + k - 1;
  const std::size_t wp = wd + k - 1;
  for (std::size_t kd = 0; kd < k; ++kd)
    for (std::size_t kh = 0; kh < k; ++kh) {
      std::size_t kw = 0;
      for (; kw + 4 <= k; kw += 4) {
        __m256d acc = _mm256_setzero_pd();
        for (std::size_t od = 0; od < d; ++od)
          for (std::size_t oh = 0; oh < h; ++oh) {
            const double* xr = xpad + ((od + kd) * hp + (oh + kh)) * wp + kw;
            const double* ur = up + (od * h + oh) * wd;
            for (std::size_t ow = 0; ow < wd; ++ow) {
              __m256d t = _mm256_mul_pd(_mm256_set1_pd(ur[ow]), _mm256_loadu_pd(xr + ow));
              acc = _mm256_add_pd(acc, t);
            }
          }
        double lanes[4];
        _mm256_storeu_pd(lanes, acc);
        double* dst = dw + (kd * k + kh) * k + kw;
        for (int j = 0; j < 4; ++j) dst[j] += lanes[j];
      }
      for (; kw < k; ++kw) {
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
}

#else // !__AVX2__

bool available() { return false; }
void add(const double* a, const double* b, double* out, std::size_t n) { scalar::add(a, b, out, n); }
void sub(const double* a, const double* b, double* out, std::size_t n) { scalar::sub(a, b, out, n); }
void mul(const double* a, const double* b, double* out, std::size_t n) { scalar::mul(a, b, out, n); }
void scale(const double* a, double s, double* out, std::size_t n) { scalar::scale(a, s, out, n); }
void axpy(const double* a, const double* b, double s, double* out, std::size_t n) { scalar::axpy(a, b, s, out, n); }
void corr3d(const double* xpad, const double* w, double* out,
            std::size_t d, std::size_t h, std::size_t wd, std::size_t k) {
  scalar::corr3d(xpad, w, out, d, h, wd, k);
}
void corr3d_taps(const double* xpad, const double* up, double* dw,
                 std::size_t d, std::size_t h, std::size_t wd, std::size_t k) {
  scalar::corr3d_taps(xpad, up, dw, d, h, wd, k);
}

#endif

} // namespace rep3d::kernels::avx2
