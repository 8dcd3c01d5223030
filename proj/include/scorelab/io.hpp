#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "scorelab/errors.hpp"
#include "scorelab/tensor.hpp"

namespace scorelab {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace io {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw ArtifactError("write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw ArtifactError(std::string("truncated input while reading ") + what);
}

template <typename T>
void write_le(std::ostream& os, T v) {
  write_bytes(os, &v, sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  T v{};
  read_bytes(is, &v, sizeof(T), what);
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_le<std::uint64_t>(os, s.size());
  write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is, const char* what) {
  auto n = read_le<std::uint64_t>(is, what);
  if (n > (1ull << 30)) throw ArtifactError(std::string("implausible string length in ") + what);
  std::string s(n, '\0');
  read_bytes(is, s.data(), n, what);
  return s;
}

}  // namespace io

// Tensor block: magic "STNS", u8 version=1, u8 dtype (0=f32, 1=f64), u8 rank,
// little-endian u64 extents, then row-major little-endian payload.
enum class TensorDType : std::uint8_t { F32 = 0, F64 = 1 };

inline void write_tensor(std::ostream& os, const Tensor& t, TensorDType dtype = TensorDType::F64) {
  io::write_bytes(os, "STNS", 4);
  io::write_le<std::uint8_t>(os, 1);
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) io::write_le<std::uint64_t>(os, e);
  if (dtype == TensorDType::F64) {
    io::write_bytes(os, t.data(), t.numel() * sizeof(double));
  } else {
    std::vector<float> buf(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) buf[i] = static_cast<float>(t[i]);
    io::write_bytes(os, buf.data(), buf.size() * sizeof(float));
  }
}

inline Tensor read_tensor(std::istream& is) {
  char magic[4];
  io::read_bytes(is, magic, 4, "tensor magic");
  if (std::memcmp(magic, "STNS", 4) != 0) throw ArtifactError("bad tensor magic (expected STNS)");
  auto version = io::read_le<std::uint8_t>(is, "tensor version");
  if (version != 1) throw ArtifactError("unsupported tensor format version " + std::to_string(version));
  auto dtype = io::read_le<std::uint8_t>(is, "tensor dtype");
  if (dtype > 1) throw ArtifactError("unknown tensor dtype " + std::to_string(dtype));
  auto rank = io::read_le<std::uint8_t>(is, "tensor rank");
  Shape shape(rank);
  std::size_t numel = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = io::read_le<std::uint64_t>(is, "tensor extent");
    if (shape[i] == 0 || shape[i] > (1ull << 32)) throw ArtifactError("implausible tensor extent");
    numel *= shape[i];
  }
  std::vector<double> data(numel);
  if (dtype == static_cast<std::uint8_t>(TensorDType::F64)) {
    io::read_bytes(is, data.data(), numel * sizeof(double), "tensor payload");
  } else {
    std::vector<float> buf(numel);
    io::read_bytes(is, buf.data(), numel * sizeof(float), "tensor payload");
    for (std::size_t i = 0; i < numel; ++i) data[i] = static_cast<double>(buf[i]);
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

inline void save_tensor_file(const std::filesystem::path& path, const Tensor& t,
                             TensorDType dtype = TensorDType::F64) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArtifactError("cannot open for writing: " + path.string());
  write_tensor(os, t, dtype);
}

inline Tensor load_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArtifactError("missing tensor file: " + path.string());
  return read_tensor(is);
}

}  // namespace scorelab
