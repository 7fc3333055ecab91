#include "heba/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "heba/errors.hpp"
#include "heba/rng.hpp"
#include "heba/serialize.hpp"

namespace heba {

namespace {

using nlohmann::json;

constexpr double kMinFreqGap = 1.0;
constexpr double kMinAngleGap = std::numbers::pi / 12.0;

double angle_distance(double a, double b) {
  // orientations are modulo pi
  double d = std::abs(a - b);
  d = std::fmod(d, std::numbers::pi);
  return std::min(d, std::numbers::pi - d);
}

template <typename T>
void write_little_endian(const std::string& path, const std::vector<T>& data) {
  std::vector<T> out = data;
  if constexpr (std::endian::native == std::endian::big) {
    for (T& v : out) {
      if constexpr (sizeof(T) == 8) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        bits = __builtin_bswap64(bits);
        std::memcpy(&v, &bits, 8);
      } else {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        bits = __builtin_bswap32(bits);
        std::memcpy(&v, &bits, 4);
      }
    }
  }
  write_file_bytes(path, out.data(), out.size() * sizeof(T));
}

template <typename T>
std::vector<T> read_little_endian(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() % sizeof(T) != 0) throw IoError("truncated binary file: " + path);
  std::vector<T> out(bytes.size() / sizeof(T));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (T& v : out) {
      if constexpr (sizeof(T) == 8) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        bits = __builtin_bswap64(bits);
        std::memcpy(&v, &bits, 8);
      } else {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        bits = __builtin_bswap32(bits);
        std::memcpy(&v, &bits, 4);
      }
    }
  }
  return out;
}

}  // namespace

void DataConfig::validate() const {
  if (num_classes < 4) {
    throw InvariantError("data config: need at least 4 classes for a non-trivial split");
  }
  if (images_per_class <= shots) {
    throw InvariantError("data config: images_per_class must exceed shots so base classes "
                         "keep held-out test images");
  }
  if (shots <= 0) throw InvariantError("data config: shots must be positive");
  if (base_fraction <= 0.0 || base_fraction >= 1.0) {
    throw InvariantError("data config: base_fraction must be in (0,1)");
  }
  if (noise_sigma < 0.0 || phase_jitter < 0.0) {
    throw InvariantError("data config: noise_sigma and phase_jitter must be >= 0");
  }
  if (image_size <= 0 || text_len <= 0 || vocab_size <= 0) {
    throw InvariantError("data config: image_size, text_len, vocab_size must be positive");
  }
}

std::vector<Index> class_prompt_tokens(Index class_id, Index text_len, Index vocab_size) {
  Rng rng(0x70726F6D70740000ull ^ static_cast<std::uint64_t>(class_id));
  std::vector<Index> tokens(text_len);
  for (Index i = 0; i < text_len; ++i) tokens[i] = rng.next_below(vocab_size);
  return tokens;
}

std::vector<TextureClass> make_texture_classes(const DataConfig& cfg) {
  cfg.validate();
  std::vector<TextureClass> classes;
  for (Index c = 0; c < cfg.num_classes; ++c) {
    TextureClass tc;
    tc.class_id = c;
    tc.orientation = std::numbers::pi * static_cast<double>(c) /
                     static_cast<double>(cfg.num_classes);
    tc.frequency = 3.0 + 2.0 * static_cast<double>(c % 3);  // {3,5,7} cycles
    tc.phase_jitter = cfg.phase_jitter;
    tc.noise_sigma = cfg.noise_sigma;
    tc.prompt_tokens = class_prompt_tokens(c, cfg.text_len, cfg.vocab_size);
    classes.push_back(std::move(tc));
  }
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      const double fgap = std::abs(classes[i].frequency - classes[j].frequency);
      const double agap = angle_distance(classes[i].orientation, classes[j].orientation);
      if (fgap < kMinFreqGap && agap < kMinAngleGap) {
        throw InvariantError("texture classes: separation constraint unsatisfiable for " +
                             std::to_string(cfg.num_classes) + " classes");
      }
    }
  }
  return classes;
}

FewShotSplit split_base_novel(Index num_classes, Index images_per_class, double base_fraction,
                              Index shots, std::uint64_t seed) {
  std::vector<Index> order(num_classes);
  for (Index c = 0; c < num_classes; ++c) order[c] = c;
  Rng rng(seed);
  rng.shuffle(order);

  const Index base_count = std::llround(base_fraction * static_cast<double>(num_classes));
  if (base_count < 2 || num_classes - base_count < 2) {
    throw InvariantError("split_base_novel: need at least 2 classes on each side, got " +
                         std::to_string(base_count) + " base of " + std::to_string(num_classes));
  }
  FewShotSplit split;
  split.shots = shots;
  split.base_classes.assign(order.begin(), order.begin() + base_count);
  split.novel_classes.assign(order.begin() + base_count, order.end());
  std::sort(split.base_classes.begin(), split.base_classes.end());
  std::sort(split.novel_classes.begin(), split.novel_classes.end());

  for (Index c : split.base_classes) {
    std::vector<Index> idx(images_per_class);
    for (Index i = 0; i < images_per_class; ++i) idx[i] = c * images_per_class + i;
    Rng class_rng = rng.fork(static_cast<std::uint64_t>(c));
    class_rng.shuffle(idx);
    split.train_indices[c].assign(idx.begin(), idx.begin() + shots);
    split.test_indices[c].assign(idx.begin() + shots, idx.end());
    std::sort(split.train_indices[c].begin(), split.train_indices[c].end());
    std::sort(split.test_indices[c].begin(), split.test_indices[c].end());
  }
  for (Index c : split.novel_classes) {
    std::vector<Index>& test = split.test_indices[c];
    for (Index i = 0; i < images_per_class; ++i) test.push_back(c * images_per_class + i);
  }
  return split;
}

Dataset generate_dataset(const DataConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.cfg = cfg;
  ds.classes = make_texture_classes(cfg);

  const Index s = cfg.image_size;
  const Index n_pixels = s * s;
  ds.images.resize(static_cast<std::size_t>(cfg.num_classes * cfg.images_per_class * n_pixels));
  ds.labels.resize(static_cast<std::size_t>(cfg.num_classes * cfg.images_per_class));

  Rng root(cfg.seed);
  for (const TextureClass& tc : ds.classes) {
    Rng rng = root.fork(static_cast<std::uint64_t>(tc.class_id));
    const double cos_t = std::cos(tc.orientation);
    const double sin_t = std::sin(tc.orientation);
    for (Index i = 0; i < cfg.images_per_class; ++i) {
      const Index img_idx = tc.class_id * cfg.images_per_class + i;
      const double phase = tc.phase_jitter * (2.0 * rng.next_uniform() - 1.0);
      double* px = ds.images.data() + img_idx * n_pixels;
      for (Index y = 0; y < s; ++y) {
        for (Index x = 0; x < s; ++x) {
          const double proj = (static_cast<double>(x) * cos_t + static_cast<double>(y) * sin_t) /
                              static_cast<double>(s);
          double v = 0.5 + 0.45 * std::sin(2.0 * std::numbers::pi * tc.frequency * proj + phase);
          if (tc.noise_sigma > 0.0) v += tc.noise_sigma * rng.next_normal();
          px[y * s + x] = std::clamp(v, 0.0, 1.0);
        }
      }
      ds.labels[static_cast<std::size_t>(img_idx)] = static_cast<std::uint32_t>(tc.class_id);
    }
  }
  ds.split = split_base_novel(cfg.num_classes, cfg.images_per_class, cfg.base_fraction,
                              cfg.shots, root.fork(0x73706C6974ull).next_u64());
  return ds;
}

Dataset generate_dataset(Index num_classes, Index images_per_class, std::uint64_t seed) {
  DataConfig cfg;
  cfg.num_classes = num_classes;
  cfg.images_per_class = images_per_class;
  cfg.seed = seed;
  return generate_dataset(cfg);
}

std::uint64_t Dataset::content_hash() const {
  std::uint64_t h = fnv1a64(images.data(), images.size() * sizeof(double));
  h = fnv1a64(labels.data(), labels.size() * sizeof(std::uint32_t), h);
  return h;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_little_endian(dir + "/images.bin", ds.images);
  write_little_endian(dir + "/labels.bin", ds.labels);

  json classes = json::array();
  for (const TextureClass& tc : ds.classes) {
    classes.push_back({{"class_id", tc.class_id},
                       {"frequency", tc.frequency},
                       {"orientation", tc.orientation},
                       {"phase_jitter", tc.phase_jitter},
                       {"noise_sigma", tc.noise_sigma},
                       {"prompt_tokens", tc.prompt_tokens}});
  }
  json train = json::object(), test = json::object();
  for (const auto& [c, idx] : ds.split.train_indices) train[std::to_string(c)] = idx;
  for (const auto& [c, idx] : ds.split.test_indices) test[std::to_string(c)] = idx;

  json manifest = {
      {"format", "heba-dataset-v1"},
      {"seed", ds.cfg.seed},
      {"num_classes", ds.cfg.num_classes},
      {"images_per_class", ds.cfg.images_per_class},
      {"image_size", ds.cfg.image_size},
      {"noise_sigma", ds.cfg.noise_sigma},
      {"phase_jitter", ds.cfg.phase_jitter},
      {"base_fraction", ds.cfg.base_fraction},
      {"text_len", ds.cfg.text_len},
      {"vocab_size", ds.cfg.vocab_size},
      {"content_hash", hash_hex(ds.content_hash())},
      {"classes", classes},
      {"split",
       {{"base_classes", ds.split.base_classes},
        {"novel_classes", ds.split.novel_classes},
        {"shots", ds.split.shots},
        {"train_indices", train},
        {"test_indices", test}}},
  };
  const std::string text = manifest.dump(2) + "\n";
  write_file_bytes(dir + "/manifest.json", text.data(), text.size());
}

Dataset load_dataset(const std::string& dir) {
  const auto text = read_file_bytes(dir + "/manifest.json");
  json manifest;
  try {
    manifest = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw IoError("cannot parse dataset manifest in " + dir + ": " + e.what());
  }
  if (manifest.value("format", "") != "heba-dataset-v1") {
    throw IoError("not a heba dataset manifest: " + dir);
  }

  Dataset ds;
  ds.cfg.seed = manifest.at("seed").get<std::uint64_t>();
  ds.cfg.num_classes = manifest.at("num_classes").get<Index>();
  ds.cfg.images_per_class = manifest.at("images_per_class").get<Index>();
  ds.cfg.image_size = manifest.at("image_size").get<Index>();
  ds.cfg.noise_sigma = manifest.at("noise_sigma").get<double>();
  ds.cfg.phase_jitter = manifest.at("phase_jitter").get<double>();
  ds.cfg.base_fraction = manifest.at("base_fraction").get<double>();
  ds.cfg.text_len = manifest.at("text_len").get<Index>();
  ds.cfg.vocab_size = manifest.at("vocab_size").get<Index>();

  for (const auto& c : manifest.at("classes")) {
    TextureClass tc;
    tc.class_id = c.at("class_id").get<Index>();
    tc.frequency = c.at("frequency").get<double>();
    tc.orientation = c.at("orientation").get<double>();
    tc.phase_jitter = c.at("phase_jitter").get<double>();
    tc.noise_sigma = c.at("noise_sigma").get<double>();
    tc.prompt_tokens = c.at("prompt_tokens").get<std::vector<Index>>();
    ds.classes.push_back(std::move(tc));
  }

  const auto& split = manifest.at("split");
  ds.split.base_classes = split.at("base_classes").get<std::vector<Index>>();
  ds.split.novel_classes = split.at("novel_classes").get<std::vector<Index>>();
  ds.split.shots = split.at("shots").get<Index>();
  ds.cfg.shots = ds.split.shots;
  for (const auto& [key, idx] : split.at("train_indices").items()) {
    ds.split.train_indices[std::stoll(key)] = idx.get<std::vector<Index>>();
  }
  for (const auto& [key, idx] : split.at("test_indices").items()) {
    ds.split.test_indices[std::stoll(key)] = idx.get<std::vector<Index>>();
  }

  ds.images = read_little_endian<double>(dir + "/images.bin");
  ds.labels = read_little_endian<std::uint32_t>(dir + "/labels.bin");
  if (ds.num_images() != ds.cfg.num_classes * ds.cfg.images_per_class ||
      static_cast<Index>(ds.images.size()) != ds.num_images() * ds.pixels_per_image()) {
    throw IoError("dataset binaries do not match manifest in " + dir);
  }
  if (manifest.at("content_hash").get<std::string>() != hash_hex(ds.content_hash())) {
    throw InvariantError("dataset content hash mismatch in " + dir);
  }

  // Novel-split evaluation must never touch base train images.
  for (Index c : ds.split.novel_classes) {
    if (ds.split.train_indices.count(c)) {
      throw InvariantError("dataset split: novel class " + std::to_string(c) +
                           " has train images");
    }
  }
  return ds;
}

Tensor images_tensor(const Dataset& ds, const std::vector<Index>& image_indices) {
  const Index s = ds.cfg.image_size;
  const Index n_pixels = s * s;
  const Index b = static_cast<Index>(image_indices.size());
  Eigen::ArrayXd out(b * n_pixels);
  for (Index i = 0; i < b; ++i) {
    const Index idx = image_indices[static_cast<std::size_t>(i)];
    if (idx < 0 || idx >= ds.num_images()) {
      throw InvariantError("images_tensor: image index out of range");
    }
    std::memcpy(out.data() + i * n_pixels, ds.image_ptr(idx),
                static_cast<std::size_t>(n_pixels) * sizeof(double));
  }
  return Tensor::from_array({b, 1, s, s}, std::move(out));
}

std::vector<Index> prompt_ids(const Dataset& ds, const std::vector<Index>& class_ids) {
  std::vector<Index> ids;
  ids.reserve(class_ids.size() * static_cast<std::size_t>(ds.cfg.text_len));
  for (Index c : class_ids) {
    if (c < 0 || c >= static_cast<Index>(ds.classes.size())) {
      throw InvariantError("prompt_ids: class id out of range");
    }
    const auto& tokens = ds.classes[static_cast<std::size_t>(c)].prompt_tokens;
    ids.insert(ids.end(), tokens.begin(), tokens.end());
  }
  return ids;
}

}  // namespace heba
