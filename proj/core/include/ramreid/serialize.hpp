#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>

#include "ramreid/tensor.hpp"

namespace ramreid {

// Binary tensor file: "RAMT", u32 rank, rank x u64 dims, then the payload as
// little-endian float64 in row-major order.
void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

// Little-endian primitives shared by the binary formats.
void write_u32_le(std::ostream& out, std::uint32_t value);
void write_u64_le(std::ostream& out, std::uint64_t value);
void write_f64_le(std::ostream& out, std::span<const double> values);
std::uint32_t read_u32_le(std::istream& in);
std::uint64_t read_u64_le(std::istream& in);
void read_f64_le(std::istream& in, std::span<double> values);

}  // namespace ramreid
