#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rep3d/autodiff.hpp"
#include "rep3d/tensor.hpp"

namespace rep3d::erf {

// Accumulated |d y_center / d x| over random standard-normal inputs. The
// probe injects a unit upstream gradient at the central output voxel of
// every channel and averages absolute input gradients over samples
// (summed over input channels), in fixed sample order.
struct ERFMap {
  Tensor map; // D x H x W, all >= 0
  int n_samples = 0;
  std::uint64_t seed = 0;
  std::string model_desc;
};

// Differentiable forward pass; output must keep odd spatial dims.
using ModelFn = std::function<ad::Value(ad::Tape&, ad::Value x)>;

ERFMap erf_accumulate(const ModelFn& model, const std::vector<std::size_t>& input_shape,
                      int n_samples, std::uint64_t seed,
                      const std::string& model_desc = "");

struct SupportReport {
  std::vector<std::array<std::size_t, 3>> voxels; // value >= threshold * max
  std::array<std::size_t, 3> bbox_min{}, bbox_max{};
  std::vector<double> radial_mean; // unit-width Euclidean distance bins
  double half_mass_radius = 0.0;   // smallest r covering 50% of total mass
};

SupportReport erf_support(const ERFMap& m, double rel_threshold);

// Writes <prefix>_slice.pgm (8-bit max-normalized central slice along
// `axis`), <prefix>_slice.csv (%.12e values) and <prefix>_radial.csv.
void export_slices(const ERFMap& m, std::size_t axis, const std::string& path_prefix);

} // namespace rep3d::erf
