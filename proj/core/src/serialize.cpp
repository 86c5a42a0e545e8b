#include "ramreid/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "ramreid/error.hpp"

namespace ramreid {

namespace {

constexpr std::array<char, 4> kMagic = {'R', 'A', 'M', 'T'};
constexpr std::uint32_t kMaxRank = 16;

void check_stream(const std::istream& in, const char* what) {
  if (!in) throw ParseError(std::string("truncated tensor stream while reading ") + what);
}

}  // namespace

void write_u32_le(std::ostream& out, std::uint32_t value) {
  unsigned char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

void write_u64_le(std::ostream& out, std::uint64_t value) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

void write_f64_le(std::ostream& out, std::span<const double> values) {
  for (double v : values) write_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t read_u32_le(std::istream& in) {
  unsigned char bytes[4] = {};
  in.read(reinterpret_cast<char*>(bytes), 4);
  std::uint32_t value = 0;
  for (int i = 0; i < 4; ++i) value |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  return value;
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char bytes[8] = {};
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t value = 0;
  for (int i = 0; i < 8; ++i) value |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return value;
}

void read_f64_le(std::istream& in, std::span<double> values) {
  for (double& v : values) v = std::bit_cast<double>(read_u64_le(in));
}

void write_tensor(std::ostream& out, const Tensor& tensor) {
  out.write(kMagic.data(), kMagic.size());
  write_u32_le(out, static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) write_u64_le(out, d);
  write_f64_le(out, tensor.data());
  if (!out) throw IoError("failed writing tensor stream");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  check_stream(in, "magic");
  if (magic != kMagic) throw ParseError("bad tensor magic, expected RAMT");
  const std::uint32_t rank = read_u32_le(in);
  check_stream(in, "rank");
  if (rank > kMaxRank) throw ParseError("tensor rank " + std::to_string(rank) + " exceeds limit");
  Shape shape(rank);
  for (auto& d : shape) {
    d = read_u64_le(in);
    check_stream(in, "dims");
  }
  std::vector<double> data(shape_numel(shape));
  read_f64_le(in, data);
  check_stream(in, "payload");
  return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace ramreid
