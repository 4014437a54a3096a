#pragma once
// FMT1 binary tensor framing: "FMT1", u8 dtype (1=f32, 2=f64), u8 rank,
// rank x u64 LE dims, row-major LE payload.

#include <iosfwd>
#include <string>

#include "fmamba/tensor.hpp"

namespace fmamba {

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

void write_fmt1(std::ostream& os, const Tensor& t, DType dtype = DType::F64);
Tensor read_fmt1(std::istream& is);

void save_fmt1(const std::string& path, const Tensor& t, DType dtype = DType::F64);
Tensor load_fmt1(const std::string& path);

// Little-endian scalar framing shared with the checkpoint writer.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
void write_string(std::ostream& os, const std::string& s);
std::string read_string(std::istream& is);

}  // namespace fmamba
