#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "heba/tensor.hpp"

namespace heba {

// Procedural texture corpus: each class is a sinusoidal grating whose
// identity lives in (frequency, orientation), i.e. in local spatial
// structure rather than pixel intensity statistics.
struct DataConfig {
  Index num_classes = 8;
  Index images_per_class = 40;
  std::uint64_t seed = 7;
  double noise_sigma = 0.05;
  double phase_jitter = 0.25;  // radians, uniform in [-j, +j]
  double base_fraction = 0.5;
  Index shots = 16;
  Index image_size = 28;
  Index text_len = 8;
  Index vocab_size = 64;

  void validate() const;
};

struct TextureClass {
  Index class_id = 0;
  double frequency = 0.0;    // cycles per image, in [2, 8]
  double orientation = 0.0;  // radians, in [0, pi)
  double phase_jitter = 0.0;
  double noise_sigma = 0.0;
  std::vector<Index> prompt_tokens;  // [text_len], a pure function of class_id
};

struct FewShotSplit {
  std::vector<Index> base_classes;
  std::vector<Index> novel_classes;
  Index shots = 16;
  // Per class: dataset-global image indices. Base classes get exactly
  // `shots` train images plus held-out test images; novel classes are
  // test-only.
  std::map<Index, std::vector<Index>> train_indices;
  std::map<Index, std::vector<Index>> test_indices;
};

struct Dataset {
  DataConfig cfg;
  std::vector<TextureClass> classes;
  std::vector<double> images;  // [num_images, 1, S, S] row-major, values in [0,1]
  std::vector<std::uint32_t> labels;
  FewShotSplit split;

  Index num_images() const { return static_cast<Index>(labels.size()); }
  Index pixels_per_image() const { return cfg.image_size * cfg.image_size; }
  const double* image_ptr(Index i) const { return images.data() + i * pixels_per_image(); }
  std::uint64_t content_hash() const;
};

// Class parameter table with the separation guarantee (frequency gap >= 1
// or orientation gap >= pi/12 between any two classes).
std::vector<TextureClass> make_texture_classes(const DataConfig& cfg);

// Deterministic prompt token sequence for a class id (independent of the
// dataset seed).
std::vector<Index> class_prompt_tokens(Index class_id, Index text_len, Index vocab_size);

Dataset generate_dataset(const DataConfig& cfg);
Dataset generate_dataset(Index num_classes, Index images_per_class, std::uint64_t seed);

FewShotSplit split_base_novel(Index num_classes, Index images_per_class, double base_fraction,
                              Index shots, std::uint64_t seed);

// Directory layout: manifest.json + images.bin (little-endian f64) +
// labels.bin (little-endian u32).
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Leaf [B,1,S,S] tensor of the selected images.
Tensor images_tensor(const Dataset& ds, const std::vector<Index>& image_indices);
// Flattened [K * text_len] prompt ids for the given classes, in order.
std::vector<Index> prompt_ids(const Dataset& ds, const std::vector<Index>& class_ids);

}  // namespace heba
