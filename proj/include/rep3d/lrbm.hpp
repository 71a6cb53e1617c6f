#pragma once

#include <cstdint>
#include <vector>

#include "rep3d/autodiff.hpp"
#include "rep3d/conv3d.hpp"
#include "rep3d/tensor.hpp"

namespace rep3d::lrbm {

// Evaluating the reciprocal decay at beta = 0 is 0/0 at the center, so the
// prior always sees beta_eff = max(beta, kBetaFloor). beta itself stays
// freely learnable; the default init is 1e-3.
inline constexpr double kBetaFloor = 1e-6;
inline constexpr double kDefaultBetaInit = 1e-3;

// Euclidean offset norm from the kernel center, K x K x K, K odd.
Tensor distance_map(std::size_t k);

struct PriorState {
  double beta = kDefaultBetaInit;
  Tensor p; // C x 1 x K^3
};

// P = beta_eff / (f_d + beta_eff), broadcast over channels.
PriorState prior_mask(const Tensor& distance, double beta, std::size_t channels);

// Lightweight depthwise generator over the kernel grid:
// repeat (DConv -> Norm -> sigmoid) then a final DConv -> Norm for
// depth >= 2; depth 1 is DConv -> Norm -> sigmoid. Kernel size k_g, "same"
// padding; layer norm over the K^3 grid per channel, affine per channel.
struct GeneratorParams {
  struct Layer {
    Tensor w;    // C x 1 x k_g^3 depthwise bank
    Tensor gain; // C
    Tensor bias; // C
  };
  std::vector<Layer> layers;
  std::size_t k_g = 7;

  int depth() const { return static_cast<int>(layers.size()); }
  std::size_t channels() const { return layers.front().w.dim(0); }
  std::size_t parameter_count() const;

  // Final conv bank and every affine bias start at zero, gains at one, so
  // the generator output is exactly zero and M == P at step 0 (depth >= 2).
  // Earlier conv banks draw from the seed.
  static GeneratorParams init(std::size_t channels, std::size_t k_g, int depth,
                              std::uint64_t seed);
};

Tensor generator_forward(const Tensor& p, const GeneratorParams& g);

enum class MaskMode { Training, Folded };

struct ModulationMask {
  Tensor m; // C x 1 x K^3
  MaskMode mode = MaskMode::Training;
};

// M = P + f_theta(P). Not clamped: the trailing norm can push values
// outside [0, 1] and the residual form adds to a positive prior.
ModulationMask modulation_mask(const PriorState& ps, const GeneratorParams& g);

// W_eff = W (elementwise) M
DepthwiseKernel effective_kernel(const DepthwiseKernel& w, const Tensor& m);

// Frozen training-time product; prior and generator are discarded after
// this, so inference carries zero extra parameters.
DepthwiseKernel fold_for_inference(const DepthwiseKernel& w, const Tensor& m);

// --- differentiable path (used by the lrbm training arm) -------------------

struct GeneratorValues {
  struct Layer {
    ad::Value w, gain, bias;
  };
  std::vector<Layer> layers;
};

// Registers all generator tensors as parameters on the tape.
GeneratorValues register_generator(ad::Tape& t, const GeneratorParams& g);

// f_theta(P) on the tape; p has shape C x 1 x K^3.
ad::Value generator_forward(ad::Tape& t, ad::Value p, const GeneratorValues& g);

} // namespace rep3d::lrbm
