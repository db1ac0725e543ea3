#include "rvos/serialize.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace rvos {

namespace {

constexpr char kMagic[4] = {'R', 'D', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("tensor record: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  os.write(b, 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("tensor record: truncated payload");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

}  // namespace

void write_tensor_record(std::ostream& os, const Shape& shape, std::span<const double> values) {
  if (numel(shape) != values.size())
    throw std::invalid_argument("tensor record: shape " + shape_str(shape) +
                                " does not match value count");
  os.write(kMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t e : shape) put_u32(os, static_cast<std::uint32_t>(e));
  for (double v : values) put_f64(os, v);
}

TensorRecord read_tensor_record(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("tensor record: bad magic");
  const std::uint32_t rank = get_u32(is);
  if (rank > 8) throw std::runtime_error("tensor record: implausible rank");
  TensorRecord rec;
  rec.shape.resize(rank);
  for (std::uint32_t i = 0; i < rank; ++i) rec.shape[i] = get_u32(is);
  rec.values.resize(numel(rec.shape));
  for (double& v : rec.values) v = get_f64(is);
  return rec;
}

std::size_t tensor_record_size(const Shape& shape) {
  return 4 + 4 + 4 * shape.size() + 8 * numel(shape);
}

}  // namespace rvos
