#include "doctest.h"

#include "rep3d/autodiff.hpp"
#include "rep3d/conv3d.hpp"
#include "rep3d/rng.hpp"
#include "rep3d/tensor.hpp"

using namespace rep3d;

TEST_SUITE("conv3d") {

TEST_CASE("delta kernel is the identity") {
  Rng rng(1);
  const Tensor x = rng.normal({2, 3, 4, 5, 6});
  const Tensor y = dwconv3d(x, DepthwiseKernel::delta(3, 5));
  CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("ones kernel counts the padded neighborhood") {
  const std::size_t v = 5;
  const Tensor x = Tensor::full({1, 1, v, v, v}, 1.0);
  const auto k = DepthwiseKernel::from(Tensor::full({1, 1, 3, 3, 3}, 1.0));
  const Tensor y = dwconv3d(x, k);
  CHECK(y[(2 * v + 2) * v + 2] == 27.0); // interior
  CHECK(y[0] == 8.0);                    // corner: 2x2x2 overlap
}

TEST_CASE("dW counts overlap voxels for ones input and upstream") {
  const std::size_t v = 5;
  const Tensor x = Tensor::full({1, 1, v, v, v}, 1.0);
  const auto k = DepthwiseKernel::from(Tensor::full({1, 1, 3, 3, 3}, 0.5));
  const Tensor up = Tensor::full({1, 1, v, v, v}, 1.0);
  Tensor dx, dw;
  dwconv3d_backward(x, k, up, &dx, &dw);
  CHECK(dw[13] == 125.0); // center tap sees every voxel
  CHECK(dw[0] == 64.0);   // corner tap: 4^3 overlap
  // dx for a symmetric ones-kernel equals the forward counts
  CHECK(dx[(2 * v + 2) * v + 2] == doctest::Approx(27.0 * 0.5));
}

TEST_CASE("forward is bilinear in x and w") {
  Rng rng(2);
  const Tensor x1 = rng.normal({1, 2, 4, 4, 4});
  const Tensor x2 = rng.normal({1, 2, 4, 4, 4});
  const auto w1 = DepthwiseKernel::from(rng.normal({2, 1, 3, 3, 3}));
  const auto w2 = DepthwiseKernel::from(rng.normal({2, 1, 3, 3, 3}));
  const Tensor lhs = dwconv3d(add(x1, scale(x2, 2.0)), w1);
  const Tensor rhs = add(dwconv3d(x1, w1), scale(dwconv3d(x2, w1), 2.0));
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
  const auto wsum = DepthwiseKernel::from(add(w1.weights, w2.weights));
  const Tensor lw = dwconv3d(x1, wsum);
  const Tensor rw = add(dwconv3d(x1, w1), dwconv3d(x1, w2));
  CHECK(max_abs_diff(lw, rw) < 1e-12);
}

TEST_CASE("gradients match finite differences") {
  Rng rng(3);
  const Tensor x = rng.normal({1, 2, 4, 4, 4});
  const Tensor w = scale(rng.normal({2, 1, 3, 3, 3}), 0.3);
  const auto report = ad::gradcheck(
      {{"dX", x}, {"dW", w}},
      [](ad::Tape& t, const std::vector<ad::Value>& p) {
        return ad::vsum(t, ad::sigmoid(t, ad::dwconv(t, p[0], p[1])));
      });
  for (const auto& row : report.rows) {
    INFO(row.name, " rel_err ", row.max_rel_err);
    CHECK(row.pass);
  }
}

TEST_CASE("embedding commutes with convolution") {
  Rng rng(4);
  const Tensor x = rng.normal({1, 2, 6, 6, 6});
  const auto small = DepthwiseKernel::from(rng.normal({2, 1, 3, 3, 3}));
  const auto big = embed_kernel(small, 7);
  CHECK(big.k() == 7);
  CHECK(max_abs_diff(dwconv3d(x, small), dwconv3d(x, big)) < 1e-12);
  // K_S == K_L: unchanged
  CHECK(max_abs_diff(embed_kernel(small, 3).weights, small.weights) == 0.0);
  CHECK_THROWS(embed_kernel(big, 3)); // cannot shrink
}

TEST_CASE("shape and parity validation") {
  Rng rng(5);
  const Tensor x = rng.normal({1, 2, 4, 4, 4});
  CHECK_THROWS(dwconv3d(x, DepthwiseKernel::delta(3, 3)));   // channel mismatch
  CHECK_THROWS(DepthwiseKernel::from(rng.normal({2, 1, 4, 4, 4}))); // even K
}

TEST_CASE("dense strided conv matches hand counts and finite differences") {
  const Tensor x = Tensor::full({1, 1, 4, 4, 4}, 1.0);
  const Tensor w = Tensor::full({2, 1, 2, 2, 2}, 1.0);
  const Tensor b = Tensor::of({0.0, 1.0});
  const Tensor y = conv3d_dense(x, w, b, 2, 0);
  REQUIRE(y.shape() == std::vector<std::size_t>{1, 2, 2, 2, 2});
  CHECK(y[0] == 8.0);
  CHECK(y[8] == 9.0); // second channel carries the bias

  Rng rng(6);
  const Tensor xr = rng.normal({1, 2, 4, 4, 4});
  const Tensor wr = scale(rng.normal({3, 2, 3, 3, 3}), 0.2);
  const Tensor br = rng.normal({3});
  const auto report = ad::gradcheck(
      {{"x", xr}, {"w", wr}, {"b", br}},
      [](ad::Tape& t, const std::vector<ad::Value>& p) {
        return ad::vsum(
            t, ad::sigmoid(t, ad::dense_conv(t, p[0], p[1], p[2], 2, 1)));
      });
  for (const auto& row : report.rows) {
    INFO(row.name, " rel_err ", row.max_rel_err);
    CHECK(row.pass);
  }
}

} // TEST_SUITE
