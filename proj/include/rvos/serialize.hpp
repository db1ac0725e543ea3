#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "rvos/tensor.hpp"

namespace rvos {

/// Flat binary tensor record: magic "RDT1", u32 rank, u32 extents,
/// little-endian f64 payload.
struct TensorRecord {
  Shape shape;
  std::vector<double> values;
};

void write_tensor_record(std::ostream& os, const Shape& shape, std::span<const double> values);
TensorRecord read_tensor_record(std::istream& is);

/// Bytes a record of the given shape occupies on disk.
std::size_t tensor_record_size(const Shape& shape);

}  // namespace rvos
