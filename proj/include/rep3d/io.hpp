#pragma once

#include <string>
#include <vector>

#include "rep3d/tensor.hpp"

namespace rep3d::io {

// "RT3D v1" tensor container: magic `RT3D`, u8 version (1), u8 dtype code
// (0 = f64 little-endian), u32 rank, rank x u64 dims, row-major payload.
void write_rt3d(const std::string& path, const Tensor& t);
Tensor read_rt3d(const std::string& path);

// All numeric CSV output uses %.12e.
std::string fmt_double(double v);

struct CsvWriter {
  explicit CsvWriter(const std::string& path);
  ~CsvWriter();
  void row(const std::vector<std::string>& cells);
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

private:
  void* file_;
};

// Binary P5 PGM, max-normalized to [0, 255]. `values` is rows x cols
// row-major; an all-zero image is written as all black.
void write_pgm(const std::string& path, const std::vector<double>& values,
               std::size_t rows, std::size_t cols);

} // namespace rep3d::io
