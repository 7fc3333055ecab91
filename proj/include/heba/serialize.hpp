#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "heba/tensor.hpp"

namespace heba {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Checkpoint layout: <stem>.json is the manifest, <stem>.bin the single
// binary blob. Each manifest entry is {name, shape, dtype:"f64",
// byte_offset, byte_length}; payloads are little-endian f64, row-major.
void save_checkpoint(const std::string& json_path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& extra);

struct LoadedCheckpoint {
  nlohmann::json manifest;
  std::vector<NamedTensor> tensors;  // manifest order
  std::map<std::string, Tensor> by_name;

  const Tensor& require(const std::string& name) const;
};

LoadedCheckpoint load_checkpoint(const std::string& json_path);

// FNV-1a over raw bytes; used for backbone/dataset integrity hashes.
std::uint64_t fnv1a64(const void* data, std::size_t len,
                      std::uint64_t h = 0xCBF29CE484222325ull);
std::uint64_t tensors_hash(const std::vector<NamedTensor>& tensors);
std::string hash_hex(std::uint64_t h);

void write_file_bytes(const std::string& path, const void* data, std::size_t len);
std::vector<unsigned char> read_file_bytes(const std::string& path);

}  // namespace heba
