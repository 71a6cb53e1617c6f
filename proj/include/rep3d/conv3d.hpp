#pragma once

#include "rep3d/tensor.hpp"

namespace rep3d {

// Per-channel kernel bank, shape C x 1 x K x K x K, K odd. "Convolution"
// throughout this library means cross-correlation (no kernel flip), the
// deep-learning convention; the input-gradient rule below is where the
// distinction matters.
struct DepthwiseKernel {
  Tensor weights;

  static DepthwiseKernel from(Tensor weights);
  std::size_t channels() const { return weights.dim(0); }
  std::size_t k() const { return weights.dim(2); }
  std::size_t center() const { return (k() - 1) / 2; }

  // Identity element: 1 at the spatial center of every channel.
  static DepthwiseKernel delta(std::size_t channels, std::size_t k);
};

// Depthwise 3D convolution with "same" zero padding (K-1)/2.
// x: N x C x D x H x W, channel count must match the kernel bank.
Tensor dwconv3d(const Tensor& x, const DepthwiseKernel& k);

// Exact adjoints. dx = correlation of upstream with the axis-reflected
// kernel; dw[c, taps] = sum over batch/space of upstream * shifted x.
void dwconv3d_backward(const Tensor& x, const DepthwiseKernel& k,
                       const Tensor& upstream, Tensor* dx, Tensor* dw);

// Centers a K_S^3 bank inside a K_L^3 zero field (the zero-padding
// operator on kernels). K_S == K_L returns the kernel unchanged.
DepthwiseKernel embed_kernel(const DepthwiseKernel& small, std::size_t k_target);

// Dense (cross-channel) strided convolution used by the toy encoder's stem,
// downsampling, and output head. w: Cout x Cin x K x K x K, bias: Cout.
// Output spatial extent: (in + 2*pad - k) / stride + 1.
Tensor conv3d_dense(const Tensor& x, const Tensor& w, const Tensor& bias,
                    std::size_t stride, std::size_t pad);
void conv3d_dense_backward(const Tensor& x, const Tensor& w,
                           const Tensor& upstream, std::size_t stride,
                           std::size_t pad, Tensor* dx, Tensor* dw,
                           Tensor* dbias);

} // namespace rep3d
