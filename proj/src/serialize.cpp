#include "heba/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "heba/errors.hpp"

namespace heba {

namespace {

using nlohmann::json;

std::string blob_path_for(const std::string& json_path) {
  auto dot = json_path.find_last_of('.');
  auto slash = json_path.find_last_of("/\\");
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) {
    return json_path + ".bin";
  }
  return json_path.substr(0, dot) + ".bin";
}

std::string base_name(const std::string& path) {
  auto slash = path.find_last_of("/\\");
  return slash == std::string::npos ? path : path.substr(slash + 1);
}

// Payloads are little-endian on disk; swap on big-endian hosts.
void to_little_endian(std::vector<double>& data) {
  if constexpr (std::endian::native == std::endian::big) {
    for (double& d : data) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, 8);
      bits = __builtin_bswap64(bits);
      std::memcpy(&d, &bits, 8);
    }
  }
}

}  // namespace

void write_file_bytes(const std::string& path, const void* data, std::size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) throw IoError("short write: " + path);
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open for reading: " + path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw IoError("short read: " + path);
  return bytes;
}

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

std::uint64_t tensors_hash(const std::vector<NamedTensor>& tensors) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const auto& nt : tensors) {
    h = fnv1a64(nt.name.data(), nt.name.size(), h);
    std::vector<double> payload(nt.tensor.values().data(),
                                nt.tensor.values().data() + nt.tensor.numel());
    to_little_endian(payload);
    h = fnv1a64(payload.data(), payload.size() * sizeof(double), h);
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream out;
  out << "0x" << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

void save_checkpoint(const std::string& json_path, const std::vector<NamedTensor>& tensors,
                     const json& extra) {
  const std::string blob_path = blob_path_for(json_path);

  std::vector<double> blob;
  json entries = json::array();
  std::size_t offset = 0;
  for (const auto& nt : tensors) {
    const std::size_t len = static_cast<std::size_t>(nt.tensor.numel()) * sizeof(double);
    entries.push_back({{"name", nt.name},
                       {"shape", nt.tensor.shape()},
                       {"dtype", "f64"},
                       {"byte_offset", offset},
                       {"byte_length", len}});
    blob.insert(blob.end(), nt.tensor.values().data(),
                nt.tensor.values().data() + nt.tensor.numel());
    offset += len;
  }
  to_little_endian(blob);

  json manifest = extra.is_object() ? extra : json::object();
  manifest["format"] = "heba-checkpoint-v1";
  manifest["blob"] = base_name(blob_path);
  manifest["tensors"] = std::move(entries);

  write_file_bytes(blob_path, blob.data(), blob.size() * sizeof(double));
  const std::string text = manifest.dump(2) + "\n";
  write_file_bytes(json_path, text.data(), text.size());
}

const Tensor& LoadedCheckpoint::require(const std::string& name) const {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw InvariantError("checkpoint is missing tensor: " + name);
  return it->second;
}

LoadedCheckpoint load_checkpoint(const std::string& json_path) {
  LoadedCheckpoint result;
  const auto text = read_file_bytes(json_path);
  try {
    result.manifest = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw IoError("cannot parse checkpoint manifest " + json_path + ": " + e.what());
  }
  if (result.manifest.value("format", "") != "heba-checkpoint-v1") {
    throw IoError("not a heba checkpoint manifest: " + json_path);
  }

  std::string dir;
  if (auto slash = json_path.find_last_of("/\\"); slash != std::string::npos) {
    dir = json_path.substr(0, slash + 1);
  }
  const std::string blob_path = dir + result.manifest.at("blob").get<std::string>();
  const auto blob = read_file_bytes(blob_path);

  for (const auto& entry : result.manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    if (entry.at("dtype").get<std::string>() != "f64") {
      throw IoError("unsupported dtype for tensor " + name);
    }
    const std::size_t off = entry.at("byte_offset").get<std::size_t>();
    const std::size_t len = entry.at("byte_length").get<std::size_t>();
    if (off + len > blob.size() || len != static_cast<std::size_t>(shape_numel(shape)) * 8) {
      throw IoError("corrupt checkpoint entry for tensor " + name);
    }
    std::vector<double> data(len / 8);
    std::memcpy(data.data(), blob.data() + off, len);
    to_little_endian(data);  // involution: converts back to host order
    Tensor t = Tensor::from_data(shape, std::move(data));
    result.tensors.push_back({name, t});
    result.by_name.emplace(name, t);
  }
  return result;
}

}  // namespace heba
