#include "doctest.h"

#include <cstring>
#include <vector>

#include "rep3d/kernels.hpp"
#include "rep3d/rng.hpp"

using namespace rep3d;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.next_normal();
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

} // namespace

TEST_SUITE("kernels") {

TEST_CASE("avx2 elementwise is bitwise-identical to scalar") {
  if (!kernels::avx2::available()) return; // nothing to compare on this CPU
  Rng rng(7);
  // cover remainders around the 4-lane width
  for (std::size_t n : {1u, 3u, 4u, 5u, 7u, 8u, 64u, 1001u}) {
    const auto a = random_vec(rng, n);
    const auto b = random_vec(rng, n);
    std::vector<double> s(n), v(n);
    kernels::scalar::add(a.data(), b.data(), s.data(), n);
    kernels::avx2::add(a.data(), b.data(), v.data(), n);
    CHECK(bitwise_equal(s, v));
    kernels::scalar::sub(a.data(), b.data(), s.data(), n);
    kernels::avx2::sub(a.data(), b.data(), v.data(), n);
    CHECK(bitwise_equal(s, v));
    kernels::scalar::mul(a.data(), b.data(), s.data(), n);
    kernels::avx2::mul(a.data(), b.data(), v.data(), n);
    CHECK(bitwise_equal(s, v));
    kernels::scalar::scale(a.data(), 1.7, s.data(), n);
    kernels::avx2::scale(a.data(), 1.7, v.data(), n);
    CHECK(bitwise_equal(s, v));
    kernels::scalar::axpy(a.data(), b.data(), -0.3, s.data(), n);
    kernels::avx2::axpy(a.data(), b.data(), -0.3, v.data(), n);
    CHECK(bitwise_equal(s, v));
  }
}

TEST_CASE("avx2 corr3d and corr3d_taps are bitwise-identical to scalar") {
  if (!kernels::avx2::available()) return;
  Rng rng(11);
  struct Case {
    std::size_t d, h, w, k;
  };
  for (const Case c : {Case{4, 4, 4, 3}, Case{5, 3, 7, 3}, Case{6, 6, 6, 5},
                       Case{2, 2, 9, 7}, Case{1, 1, 1, 3}}) {
    const std::size_t pd = c.d + c.k - 1, ph = c.h + c.k - 1, pw = c.w + c.k - 1;
    const auto xpad = random_vec(rng, pd * ph * pw);
    const auto w = random_vec(rng, c.k * c.k * c.k);
    std::vector<double> os(c.d * c.h * c.w), ov(os.size());
    kernels::scalar::corr3d(xpad.data(), w.data(), os.data(), c.d, c.h, c.w, c.k);
    kernels::avx2::corr3d(xpad.data(), w.data(), ov.data(), c.d, c.h, c.w, c.k);
    CHECK(bitwise_equal(os, ov));

    const auto up = random_vec(rng, os.size());
    std::vector<double> ds(w.size(), 0.25), dv(w.size(), 0.25); // accumulates
    kernels::scalar::corr3d_taps(xpad.data(), up.data(), ds.data(), c.d, c.h, c.w,
                                 c.k);
    kernels::avx2::corr3d_taps(xpad.data(), up.data(), dv.data(), c.d, c.h, c.w,
                               c.k);
    CHECK(bitwise_equal(ds, dv));
  }
}

TEST_CASE("backend dispatch honors set_backend") {
  const kernels::Backend prev = kernels::active_backend();
  kernels::set_backend(kernels::Backend::Scalar);
  CHECK(kernels::backend_name(kernels::active_backend()) == "scalar");
  kernels::set_backend(prev);
}

TEST_CASE("corr3d matches a naive triple loop") {
  Rng rng(3);
  const std::size_t d = 3, h = 4, w = 5, k = 3;
  const std::size_t pd = d + k - 1, ph = h + k - 1, pw = w + k - 1;
  const auto xpad = random_vec(rng, pd * ph * pw);
  const auto ker = random_vec(rng, k * k * k);
  std::vector<double> out(d * h * w);
  kernels::corr3d(xpad.data(), ker.data(), out.data(), d, h, w, k);
  for (std::size_t z = 0; z < d; ++z)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t kd = 0; kd < k; ++kd)
          for (std::size_t kh = 0; kh < k; ++kh)
            for (std::size_t kw = 0; kw < k; ++kw)
              acc += xpad[((z + kd) * ph + y + kh) * pw + x + kw] *
                     ker[(kd * k + kh) * k + kw];
        CHECK(out[(z * h + y) * w + x] == doctest::Approx(acc).epsilon(1e-14));
      }
}

} // TEST_SUITE
