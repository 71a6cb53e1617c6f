#include "rep3d/erf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rep3d/io.hpp"
#include "rep3d/rng.hpp"

namespace rep3d::erf {

ERFMap erf_accumulate(const ModelFn& model, const std::vector<std::size_t>& input_shape,
                      int n_samples, std::uint64_t seed,
                      const std::string& model_desc) {
  if (input_shape.size() != 5)
    throw std::invalid_argument("erf_accumulate: input shape must be NxCxDxHxW");
  const std::size_t d = input_shape[2], h = input_shape[3], w = input_shape[4];
  if (d % 2 == 0 || h % 2 == 0 || w % 2 == 0)
    throw std::invalid_argument("erf_accumulate: spatial dims must be odd");
  if (n_samples < 1) throw std::invalid_argument("erf_accumulate: need >= 1 sample");

  Rng rng(seed);
  ERFMap out;
  out.map = Tensor({d, h, w});
  out.n_samples = n_samples;
  out.seed = seed;
  out.model_desc = model_desc;

  for (int s = 0; s < n_samples; ++s) {
    ad::Tape t;
    ad::Value x = t.leaf(rng.normal(input_shape), true);
    ad::Value y = model(t, x);
    const Tensor& yv = t.value(y);
    if (yv.rank() != 5)
      throw std::invalid_argument("erf_accumulate: model output must be rank 5");
    const std::size_t od = yv.dim(2), oh = yv.dim(3), ow = yv.dim(4);
    if (od % 2 == 0 || oh % 2 == 0 || ow % 2 == 0)
      throw std::invalid_argument("erf_accumulate: output spatial dims must be odd");
    Tensor sd(yv.shape());
    const std::size_t spatial = od * oh * ow;
    const std::size_t center = ((od / 2) * oh + oh / 2) * ow + ow / 2;
    for (std::size_t nc = 0; nc < yv.dim(0) * yv.dim(1); ++nc)
      sd[nc * spatial + center] = 1.0;
    t.backward(y, &sd);
    const Tensor& dx = t.grad(x);
    check_finite(dx, "erf_accumulate");
    const std::size_t vox = d * h * w;
    for (std::size_t nc = 0; nc < input_shape[0] * input_shape[1]; ++nc)
      for (std::size_t i = 0; i < vox; ++i)
        out.map[i] += std::fabs(dx[nc * vox + i]);
  }
  for (std::size_t i = 0; i < out.map.size(); ++i)
    out.map[i] /= static_cast<double>(n_samples);
  return out;
}

SupportReport erf_support(const ERFMap& m, double rel_threshold) {
  const double maxv = max_abs(m.map);
  if (maxv <= 0.0) throw std::runtime_error("erf_support: all-zero map");
  const std::size_t d = m.map.dim(0), h = m.map.dim(1), w = m.map.dim(2);
  const double cz = (static_cast<double>(d) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;

  SupportReport report;
  report.bbox_min = {d, h, w};
  report.bbox_max = {0, 0, 0};
  const double cutoff = rel_threshold * maxv;

  const double max_r = std::sqrt(cz * cz + cy * cy + cx * cx);
  std::vector<double> bin_sum(static_cast<std::size_t>(max_r) + 2, 0.0);
  std::vector<std::size_t> bin_count(bin_sum.size(), 0);

  struct Entry {
    double r, v;
  };
  std::vector<Entry> entries;
  entries.reserve(m.map.size());
  double total = 0.0;

  for (std::size_t z = 0; z < d; ++z)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double v = m.map[(z * h + y) * w + x];
        const double r = std::sqrt((z - cz) * (z - cz) + (y - cy) * (y - cy) +
                                   (x - cx) * (x - cx));
        bin_sum[static_cast<std::size_t>(r)] += v;
        bin_count[static_cast<std::size_t>(r)] += 1;
        entries.push_back({r, v});
        total += v;
        if (v >= cutoff) {
          report.voxels.push_back({z, y, x});
          for (int a = 0; a < 3; ++a) {
            const std::size_t c = a == 0 ? z : (a == 1 ? y : x);
            report.bbox_min[a] = std::min(report.bbox_min[a], c);
            report.bbox_max[a] = std::max(report.bbox_max[a], c);
          }
        }
      }

  for (std::size_t b = 0; b < bin_sum.size(); ++b)
    report.radial_mean.push_back(bin_count[b] ? bin_sum[b] / bin_count[b] : 0.0);

  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.r < b.r; });
  double acc = 0.0;
  for (const Entry& e : entries) {
    acc += e.v;
    if (acc >= 0.5 * total) {
      report.half_mass_radius = e.r;
      break;
    }
  }
  return report;
}

void export_slices(const ERFMap& m, std::size_t axis, const std::string& path_prefix) {
  if (axis > 2) throw std::invalid_argument("export_slices: axis must be 0, 1, or 2");
  const std::size_t dims[3] = {m.map.dim(0), m.map.dim(1), m.map.dim(2)};
  const std::size_t mid = dims[axis] / 2;
  const std::size_t rows = dims[axis == 0 ? 1 : 0];
  const std::size_t cols = dims[axis == 2 ? 1 : 2];

  std::vector<double> slice(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t z, y, x;
      if (axis == 0) {
        z = mid; y = r; x = c;
      } else if (axis == 1) {
        z = r; y = mid; x = c;
      } else {
        z = r; y = c; x = mid;
      }
      slice[r * cols + c] = m.map[(z * dims[1] + y) * dims[2] + x];
    }

  io::write_pgm(path_prefix + "_slice.pgm", slice, rows, cols);

  io::CsvWriter sv(path_prefix + "_slice.csv");
  sv.row({"row", "col", "value"});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      sv.row({std::to_string(r), std::to_string(c),
              io::fmt_double(slice[r * cols + c])});

  const SupportReport rep = erf_support(m, 0.0);
  io::CsvWriter rv(path_prefix + "_radial.csv");
  rv.row({"distance_bin", "mean_value"});
  for (std::size_t b = 0; b < rep.radial_mean.size(); ++b)
    rv.row({std::to_string(b), io::fmt_double(rep.radial_mean[b])});
}

} // namespace rep3d::erf
