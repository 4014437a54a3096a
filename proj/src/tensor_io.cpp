#include "fmamba/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace fmamba {
namespace {

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw IoError("unexpected end of stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put_le(os, v); }
std::uint32_t read_u32(std::istream& is) { return get_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return get_le<std::uint64_t>(is); }

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  if (n > (1ull << 32)) throw IoError("implausible string length in stream");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("unexpected end of stream");
  return s;
}

void write_fmt1(std::ostream& os, const Tensor& t, DType dtype) {
  os.write("FMT1", 4);
  const auto code = static_cast<std::uint8_t>(dtype);
  const auto rank = static_cast<std::uint8_t>(t.rank());
  os.put(static_cast<char>(code));
  os.put(static_cast<char>(rank));
  for (auto d : t.shape()) write_u64(os, static_cast<std::uint64_t>(d));
  for (Real v : t.data()) {
    if (dtype == DType::F32) {
      put_le(os, static_cast<float>(v));
    } else {
      put_le(os, v);
    }
  }
  if (!os) throw IoError("failed writing FMT1 tensor");
}

Tensor read_fmt1(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FMT1", 4) != 0) throw IoError("bad FMT1 magic");
  const int code = is.get();
  const int rank = is.get();
  if (!is) throw IoError("truncated FMT1 header");
  if (code != 1 && code != 2) throw IoError("unsupported FMT1 dtype code " + std::to_string(code));
  if (rank < 1) throw IoError("FMT1 rank must be >= 1");
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) {
    const std::uint64_t v = read_u64(is);
    if (v == 0 || v > (1ull << 40)) throw IoError("invalid FMT1 dimension");
    d = static_cast<std::int64_t>(v);
  }
  std::vector<Real> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = code == 1 ? static_cast<Real>(get_le<float>(is)) : get_le<double>(is);
  return Tensor(shape, std::move(data));
}

void save_fmt1(const std::string& path, const Tensor& t, DType dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_fmt1(os, t, dtype);
}

Tensor load_fmt1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_fmt1(is);
}

}  // namespace fmamba
