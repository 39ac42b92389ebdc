#pragma once

#include <iosfwd>
#include <string>

#include "lexshort/tensor.hpp"

namespace lexshort {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Blob layout: one JSON header line {"name","shape","dtype":"f32"} followed
// by the row-major payload as little-endian 32-bit floats.
void write_tensor_blob(std::ostream& out, const std::string& name, const Tensor& t);

// Throws on malformed input.
NamedTensor read_tensor_blob(std::istream& in);

// Returns false at a clean end of stream instead of throwing.
bool try_read_tensor_blob(std::istream& in, NamedTensor& out);

}  // namespace lexshort
