#pragma once

// Named-tensor container shared by traces, weight checkpoints and PCA exports.
//
// Layout:
//   u64 little-endian header length L
//   L bytes of UTF-8 JSON: { name: {"dtype":"F32","shape":[...],"byte_range":[b,e)}, ...,
//                            "__metadata__": { key: string, ... } }
//   raw little-endian float32 buffers, byte_range relative to the end of the header.
//
// Output is deterministic: tensors are laid out in lexicographic name order and
// the JSON index is emitted with sorted keys and no whitespace.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace ihead {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const;
};

struct TensorContainer {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> metadata;

  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  // Throws data_error if absent.
  const Tensor& at(const std::string& name) const;
  const std::string& meta(const std::string& key) const;
};

// Throws data_error on non-finite values or shape/data size mismatch, and
// std::runtime_error if the stream fails.
void write_container(const TensorContainer& container, std::ostream& out);
std::vector<char> encode_container(const TensorContainer& container);

TensorContainer read_container(std::istream& in);
TensorContainer decode_container(const std::vector<char>& bytes);

void save_container(const TensorContainer& container, const std::string& path);
TensorContainer load_container(const std::string& path);

}  // namespace ihead
