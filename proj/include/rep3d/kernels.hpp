#pragma once

#include <cstddef>
#include <string>

// Low-level numeric kernels with a scalar reference implementation and an
// AVX2 variant selected at runtime. Both paths are required to produce
// bitwise-identical results: the SIMD variants vectorize across independent
// output elements and never reorder a per-element accumulation. The library
// is built with -ffp-contract=off so the compiler cannot fuse mul+add on
// one path only.
namespace rep3d::kernels {

enum class Backend { Scalar, Avx2 };

// Best backend the running CPU supports.
Backend detect_backend();

// Process-wide active backend. Defaults to detect_backend(); the
// REP3D_BACKEND environment variable ("scalar" / "avx2") overrides it.
Backend active_backend();
void set_backend(Backend b);
std::string backend_name(Backend b);

// Elementwise over n doubles. out may alias a or b.
void add(const double* a, const double* b, double* out, std::size_t n);
void sub(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void scale(const double* a, double s, double* out, std::size_t n);
// out = a + s * b
void axpy(const double* a, const double* b, double s, double* out, std::size_t n);

// Full-overlap 3D cross-correlation of one zero-padded channel slab.
// xpad has dims (d+k-1, h+k-1, w+k-1); out has dims (d, h, w). Each output
// voxel accumulates the k^3 taps in (kd, kh, kw) row-major order.
void corr3d(const double* xpad, const double* w, double* out,
            std::size_t d, std::size_t h, std::size_t wd, std::size_t k);

// Kernel-gradient taps for the same layout: dw[kd,kh,kw] += sum over output
// voxels of up[o] * xpad[o + (kd,kh,kw)]. Accumulates into dw.
void corr3d_taps(const double* xpad, const double* up, double* dw,
                 std::size_t d, std::size_t h, std::size_t wd, std::size_t k);

namespace scalar {
void add(const double* a, const double* b, double* out, std::size_t n);
void sub(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void scale(const double* a, double s, double* out, std::size_t n);
void axpy(const double* a, const double* b, double s, double* out, std::size_t n);
void corr3d(const double* xpad, const double* w, double* out,
            std::size_t d, std::size_t h, std::size_t wd, std::size_t k);
void corr3d_taps(const double* xpad, const double* up, double* dw,
                 std::size_t d, std::size_t h, std::size_t wd, std::size_t k);
} // namespace scalar

namespace avx2 {
bool available();
void add(const double* a, const double* b, double* out, std::size_t n);
void sub(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void scale(const double* a, double s, double* out, std::size_t n);
void axpy(const double* a, const double* b, double s, double* out, std::size_t n);
void corr3d(const double* xpad, const double* w, double* out,
            std::size_t d, std::size_t h, std::size_t wd, std::size_t k);
void corr3d_taps(const double* xpad, const double* up, double* dw,
                 std::size_t d, std::size_t h, std::size_t wd, std::size_t k);
} // namespace avx2

} // namespace rep3d::kernels
