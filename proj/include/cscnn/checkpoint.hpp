#pragma once

// Checkpoint container: magic "CSCK", version u16, then named f32 arrays
// until EOF. Per array: name (u16 length + bytes), shape (u8 rank + u32
// extents), data (little-endian f32).

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cscnn/tensor.hpp"

namespace cscnn {

inline constexpr uint16_t kCheckpointVersion = 1;

namespace io {

inline void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline bool get_u16(std::istream& is, uint16_t& v) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) return false;
  v = static_cast<uint16_t>(b[0] | (b[1] << 8));
  return true;
}

inline bool get_u32(std::istream& is, uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return true;
}

inline bool get_u64(std::istream& is, uint64_t& v) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return true;
}

inline bool get_f32(std::istream& is, float& v) {
  uint32_t bits;
  if (!get_u32(is, bits)) return false;
  std::memcpy(&v, &bits, 4);
  return true;
}

}  // namespace io

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

inline void write_checkpoint_stream(std::ostream& os, const std::vector<NamedArray>& arrays) {
  os.write("CSCK", 4);
  io::put_u16(os, kCheckpointVersion);
  for (const auto& a : arrays) {
    io::put_u16(os, static_cast<uint16_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    os.put(static_cast<char>(a.shape.size()));
    for (int e : a.shape) io::put_u32(os, static_cast<uint32_t>(e));
    for (float v : a.data) io::put_f32(os, v);
  }
}

inline std::vector<NamedArray> read_checkpoint_stream(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CSCK", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  uint16_t version;
  if (!io::get_u16(is, version) || version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  std::vector<NamedArray> arrays;
  uint16_t name_len;
  while (io::get_u16(is, name_len)) {
    NamedArray a;
    a.name.resize(name_len);
    if (!is.read(a.name.data(), name_len)) throw std::runtime_error("checkpoint: truncated name");
    int rank = is.get();
    if (rank < 0) throw std::runtime_error("checkpoint: truncated shape");
    long long n = 1;
    for (int i = 0; i < rank; ++i) {
      uint32_t e;
      if (!io::get_u32(is, e)) throw std::runtime_error("checkpoint: truncated shape");
      a.shape.push_back(static_cast<int>(e));
      n *= e;
    }
    a.data.resize(static_cast<size_t>(n));
    for (auto& v : a.data)
      if (!io::get_f32(is, v)) throw std::runtime_error("checkpoint: truncated data in " + a.name);
    arrays.push_back(std::move(a));
  }
  return arrays;
}

template <typename S>
std::vector<NamedArray> snapshot_params(
    const std::vector<std::pair<std::string, Tensor<S>>>& params) {
  std::vector<NamedArray> arrays;
  for (const auto& [name, tensor] : params) {
    NamedArray a;
    a.name = name;
    a.shape = tensor.shape();
    a.data.reserve(tensor.value().size());
    for (S v : tensor.value()) a.data.push_back(static_cast<float>(v));
    arrays.push_back(std::move(a));
  }
  return arrays;
}

template <typename S>
void restore_params(const std::vector<NamedArray>& arrays,
                    const std::vector<std::pair<std::string, Tensor<S>>>& params) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  for (const auto& [name, tensor] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: missing array " + name);
    const NamedArray& a = *it->second;
    if (a.shape != tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                               shape_str(a.shape) + " vs model " + shape_str(tensor.shape()));
    auto& value = const_cast<Tensor<S>&>(tensor).value();
    for (size_t i = 0; i < value.size(); ++i) value[i] = static_cast<S>(a.data[i]);
  }
}

template <typename S>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor<S>>>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  write_checkpoint_stream(os, snapshot_params(params));
}

template <typename S>
void load_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor<S>>>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  restore_params(read_checkpoint_stream(is), params);
}

}  // namespace cscnn
