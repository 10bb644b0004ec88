#include "inactive_heads/tensor_container.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "inactive_heads/types.hpp"

namespace ihead {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace {

void put_u64_le(std::vector<char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint64_t get_u64_le(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_f32_le(std::vector<char>& out, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

float get_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

const Tensor& TensorContainer::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw data_error("container: missing tensor '" + name + "'");
  return it->second;
}

const std::string& TensorContainer::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw data_error("container: missing metadata '" + key + "'");
  return it->second;
}

std::vector<char> encode_container(const TensorContainer& container) {
  json index = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : container.tensors) {
    if (name == "__metadata__") throw data_error("container: reserved tensor name");
    for (auto d : t.shape) {
      if (d < 0) throw data_error("container: negative dimension in '" + name + "'");
    }
    if (t.numel() != static_cast<std::int64_t>(t.data.size())) {
      throw data_error("container: shape/data size mismatch in '" + name + "'");
    }
    for (float v : t.data) {
      if (!std::isfinite(v)) throw data_error("container: non-finite value in '" + name + "'");
    }
    const std::uint64_t bytes = 4 * t.data.size();
    index[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"byte_range", {offset, offset + bytes}}};
    offset += bytes;
  }
  json meta = json::object();
  for (const auto& [k, v] : container.metadata) meta[k] = v;
  index["__metadata__"] = meta;

  const std::string header = index.dump();
  std::vector<char> out;
  out.reserve(8 + header.size() + offset);
  put_u64_le(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& [name, t] : container.tensors) {
    for (float v : t.data) put_f32_le(out, v);
  }
  return out;
}

void write_container(const TensorContainer& container, std::ostream& out) {
  const auto bytes = encode_container(container);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("container: write failed");
}

TensorContainer decode_container(const std::vector<char>& bytes) {
  if (bytes.size() < 8) throw data_error("container: truncated header length");
  const std::uint64_t header_len = get_u64_le(bytes.data());
  if (header_len > bytes.size() - 8) throw data_error("container: header length exceeds file size");

  json index;
  try {
    index = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw data_error(std::string("container: malformed header: ") + e.what());
  }
  if (!index.is_object()) throw data_error("container: header is not a JSON object");

  const char* data = bytes.data() + 8 + header_len;
  const std::uint64_t data_len = bytes.size() - 8 - header_len;

  TensorContainer c;
  for (const auto& [name, entry] : index.items()) {
    if (name == "__metadata__") {
      if (!entry.is_object()) throw data_error("container: __metadata__ must be an object");
      for (const auto& [k, v] : entry.items()) {
        if (!v.is_string()) throw data_error("container: metadata values must be strings");
        c.metadata[k] = v.get<std::string>();
      }
      continue;
    }
    Tensor t;
    std::uint64_t begin = 0, end = 0;
    try {
      if (entry.at("dtype").get<std::string>() != "F32") {
        throw data_error("container: unsupported dtype for '" + name + "'");
      }
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto range = entry.at("byte_range").get<std::vector<std::uint64_t>>();
      if (range.size() != 2) throw data_error("container: byte_range must have two entries");
      begin = range[0];
      end = range[1];
    } catch (const json::exception& e) {
      throw data_error("container: malformed index entry '" + name + "': " + e.what());
    }
    for (auto d : t.shape) {
      if (d < 0) throw data_error("container: negative dimension in '" + name + "'");
    }
    if (end < begin || end > data_len) throw data_error("container: byte_range out of bounds for '" + name + "'");
    if (end - begin != 4 * static_cast<std::uint64_t>(t.numel())) {
      throw data_error("container: byte_range does not match shape for '" + name + "'");
    }
    t.data.resize(static_cast<std::size_t>(t.numel()));
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = get_f32_le(data + begin + 4 * i);
    c.tensors.emplace(name, std::move(t));
  }
  return c;
}

TensorContainer read_container(std::istream& in) {
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

void save_container(const TensorContainer& container, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_container(container, out);
}

TensorContainer load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open: " + path);
  return read_container(in);
}

}  // namespace ihead
