#include "rep3d/io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rep3d::io {

namespace {

constexpr char kMagic[4] = {'R', 'T', '3', 'D'};

template <typename T>
void write_raw(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("RT3D: truncated file");
  return v;
}

} // namespace

void write_rt3d(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("RT3D: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_raw<std::uint8_t>(os, 1); // version
  write_raw<std::uint8_t>(os, 0); // dtype: f64 little-endian
  write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_raw<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!os) throw std::runtime_error("RT3D: write failed for " + path);
}

Tensor read_rt3d(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("RT3D: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("RT3D: bad magic in " + path);
  const auto version = read_raw<std::uint8_t>(is);
  if (version != 1) throw std::runtime_error("RT3D: unsupported version");
  const auto dtype = read_raw<std::uint8_t>(is);
  if (dtype != 0) throw std::runtime_error("RT3D: unsupported dtype code");
  const auto rank = read_raw<std::uint32_t>(is);
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(read_raw<std::uint64_t>(is));
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw std::runtime_error("RT3D: truncated payload in " + path);
  return t;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12e", v);
  return buf;
}

CsvWriter::CsvWriter(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  file_ = f;
}

CsvWriter::~CsvWriter() {
  if (file_) std::fclose(static_cast<FILE*>(file_));
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  FILE* f = static_cast<FILE*>(file_);
  for (std::size_t i = 0; i < cells.size(); ++i)
    std::fprintf(f, "%s%s", i ? "," : "", cells[i].c_str());
  std::fprintf(f, "\n");
}

void write_pgm(const std::string& path, const std::vector<double>& values,
               std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols)
    throw std::invalid_argument("write_pgm: size mismatch");
  double maxv = 0.0;
  for (double v : values) maxv = std::max(maxv, v);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "P5\n" << cols << " " << rows << "\n255\n";
  for (double v : values) {
    const double n = maxv > 0.0 ? v / maxv : 0.0;
    const int px = static_cast<int>(n * 255.0 + 0.5);
    os.put(static_cast<char>(px < 0 ? 0 : (px > 255 ? 255 : px)));
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

} // namespace rep3d::io
