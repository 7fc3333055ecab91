#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "heba/data.hpp"
#include "heba/harness.hpp"
#include "heba/serialize.hpp"

namespace heba::testutil {

// Fresh per-test scratch directory under the build tree.
inline std::string temp_dir(const std::string& name) {
  const std::string dir = (std::filesystem::temp_directory_path() / "heba_tests" / name).string();
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline DataConfig small_data_config() {
  DataConfig cfg;
  cfg.num_classes = 8;
  cfg.images_per_class = 8;
  cfg.shots = 4;
  cfg.seed = 11;
  return cfg;
}

// Writes a small dataset and returns a short-epoch run config pointing at it.
inline RunConfig small_run_config(const std::string& dir) {
  Dataset ds = generate_dataset(small_data_config());
  save_dataset(ds, dir + "/data");
  RunConfig cfg;
  cfg.dataset_dir = dir + "/data";
  cfg.optim.epochs = 2;
  cfg.loss.negative_ratio = 0;
  cfg.seeds = {1};
  return cfg;
}

inline bool same_file_bytes(const std::string& a, const std::string& b) {
  return read_file_bytes(a) == read_file_bytes(b);
}

}  // namespace heba::testutil
