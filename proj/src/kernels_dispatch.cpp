#include "rep3d/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace rep3d::kernels {

Backend detect_backend() {
  return avx2::available() ? Backend::Avx2 : Backend::Scalar;
}

namespace {

Backend initial_backend() {
  if (const char* env = std::getenv("REP3D_BACKEND")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
    if (std::strcmp(env, "avx2") == 0 && avx2::available()) return Backend::Avx2;
  }
  return detect_backend();
}

Backend g_backend = initial_backend();

} // namespace

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
  if (b == Backend::Avx2 && !avx2::available()) b = Backend::Scalar;
  g_backend = b;
}

std::string backend_name(Backend b) {
  return b == Backend::Avx2 ? "avx2" : "scalar";
}

#define REP3D_DISPATCH(fn, ...)                       \
  if (g_backend == Backend::Avx2) {                   \
    avx2::fn(__VA_ARGS__);                            \
  } else {                                            \
    scalar::fn(__VA_ARGS__);                          \
  }

void add(const double* a, const double* b, double* out, std::size_t n) {
  REP3D_DISPATCH(add, a, b, out, n)
}
void sub(const double* a, const double* b, double* out, std::size_t n) {
  REP3D_DISPATCH(sub, a, b, out, n)
}
void mul(const double* a, const double* b, double* out, std::size_t n) {
  REP3D_DISPATCH(mul, a, b, out, n)
}
void scale(const double* a, double s, double* out, std::size_t n) {
  REP3D_DISPATCH(scale, a, s, out, n)
}
void axpy(const double* a, const double* b, double s, double* out, std::size_t n) {
  REP3D_DISPATCH(axpy, a, b, s, out, n)
}
void corr3d(const double* xpad, const double* w, double* out,
            std::size_t d, std::size_t h, std::size_t wd, std::size_t k) {
  REP3D_DISPATCH(corr3d, xpad, w, out, d, h, wd, k)
}
void corr3d_taps(const double* xpad, const double* up, double* dw,
                 std::size_t d, std::size_t h, std::size_t wd, std::size_t k) {
  REP3D_DISPATCH(corr3d_taps, xpad, up, dw, d, h, wd, k)
}

#undef REP3D_DISPATCH

} // namespace rep3d::kernels
