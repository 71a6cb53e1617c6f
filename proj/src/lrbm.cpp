#include "rep3d/lrbm.hpp"

#include <cmath>
#include <stdexcept>

#include "rep3d/rng.hpp"

namespace rep3d::lrbm {

Tensor distance_map(std::size_t k) {
  if (k % 2 == 0) throw std::invalid_argument("distance_map: K must be odd");
  const double c = static_cast<double>((k - 1) / 2);
  Tensor d({k, k, k});
  for (std::size_t z = 0; z < k; ++z)
    for (std::size_t y = 0; y < k; ++y)
      for (std::size_t x = 0; x < k; ++x) {
        const double dz = static_cast<double>(z) - c;
        const double dy = static_cast<double>(y) - c;
        const double dx = static_cast<double>(x) - c;
        d[(z * k + y) * k + x] = std::sqrt(dz * dz + dy * dy + dx * dx);
      }
  return d;
}

PriorState prior_mask(const Tensor& distance, double beta, std::size_t channels) {
  const double be = std::max(beta, kBetaFloor);
  const std::size_t k = distance.dim(0);
  Tensor p({channels, 1, k, k, k});
  const std::size_t kvol = distance.size();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < kvol; ++i)
      p[c * kvol + i] = be / (distance[i] + be);
  return PriorState{beta, std::move(p)};
}

std::size_t GeneratorParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.w.size() + l.gain.size() + l.bias.size();
  return n;
}

GeneratorParams GeneratorParams::init(std::size_t channels, std::size_t k_g,
                                      int depth, std::uint64_t seed) {
  if (k_g % 2 == 0) throw std::invalid_argument("generator kernel size must be odd");
  if (depth < 1 || depth > 3)
    throw std::invalid_argument("generator depth must be 1, 2, or 3");
  Rng rng(seed);
  const double std_w = 1.0 / std::sqrt(static_cast<double>(k_g * k_g * k_g));
  GeneratorParams g;
  g.k_g = k_g;
  for (int i = 0; i < depth; ++i) {
    Layer l;
    const bool last = i == depth - 1;
    l.w = (last && depth >= 2)
              ? Tensor({channels, 1, k_g, k_g, k_g})
              : scale(rng.normal({channels, 1, k_g, k_g, k_g}), std_w);
    l.gain = Tensor::full({channels}, 1.0);
    l.bias = Tensor({channels});
    g.layers.push_back(std::move(l));
  }
  return g;
}

Tensor generator_forward(const Tensor& p, const GeneratorParams& g) {
  const std::size_t channels = p.dim(0);
  const std::size_t k = p.dim(2);
  // kernel grid as a 1 x C x K^3 volume
  std::vector<double> data(p.data(), p.data() + p.size());
  Tensor h({1, channels, k, k, k}, std::move(data));
  const int d = g.depth();
  for (int i = 0; i < d; ++i) {
    const auto& l = g.layers[i];
    h = dwconv3d(h, DepthwiseKernel::from(l.w));
    h = layer_norm_val(h, 1, 3, l.gain, l.bias);
    if (i < d - 1 || d == 1) h = sigmoid_val(h);
  }
  std::vector<double> out(h.data(), h.data() + h.size());
  return Tensor({channels, std::size_t{1}, k, k, k}, std::move(out));
}

ModulationMask modulation_mask(const PriorState& ps, const GeneratorParams& g) {
  return ModulationMask{add(ps.p, generator_forward(ps.p, g)), MaskMode::Training};
}

DepthwiseKernel effective_kernel(const DepthwiseKernel& w, const Tensor& m) {
  return DepthwiseKernel::from(mul(w.weights, m));
}

DepthwiseKernel fold_for_inference(const DepthwiseKernel& w, const Tensor& m) {
  // same arithmetic as effective_kernel; the caller drops prior/generator
  return effective_kernel(w, m);
}

GeneratorValues register_generator(ad::Tape& t, const GeneratorParams& g) {
  GeneratorValues v;
  for (const auto& l : g.layers)
    v.layers.push_back({t.param(l.w), t.param(l.gain), t.param(l.bias)});
  return v;
}

ad::Value generator_forward(ad::Tape& t, ad::Value p, const GeneratorValues& g) {
  const Tensor& pv = t.value(p);
  const std::size_t channels = pv.dim(0);
  const std::size_t k = pv.dim(2);
  ad::Value h = ad::reshape(t, p, {1, channels, k, k, k});
  const int d = static_cast<int>(g.layers.size());
  for (int i = 0; i < d; ++i) {
    const auto& l = g.layers[i];
    h = ad::dwconv(t, h, l.w);
    h = ad::layer_norm(t, h, 1, 3, l.gain, l.bias);
    if (i < d - 1 || d == 1) h = ad::sigmoid(t, h);
  }
  return ad::reshape(t, h, {channels, 1, k, k, k});
}

} // namespace rep3d::lrbm
