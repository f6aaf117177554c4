#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "memsub/pipeline.hpp"

namespace memsub::test {

inline ModelConfig tiny_model(std::size_t hidden = 8, std::size_t inner = 12, std::size_t depth = 2) {
  ModelConfig c;
  c.image_size = 4;
  c.hidden = hidden;
  c.inner = inner;
  c.depth = depth;
  c.num_labels = 4;
  c.timesteps = 10;
  return c;
}

/// Scratch directory under the system temp dir, wiped on construction.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("memsub_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// A run config small enough for end-to-end tests in seconds.
inline RunConfig small_run(const std::filesystem::path& out) {
  nlohmann::json j = {
      {"output_dir", out.string()},
      {"dataset", {{"num_classes", 3}, {"images_per_class", 10}, {"num_duplicated", 4}, {"duplicate_copies", 10}, {"image_size", 8}}},
      {"model", {{"hidden", 16}, {"inner", 32}, {"depth", 2}, {"timesteps", 10}}},
      {"train", {{"iterations", 60}, {"batch_size", 8}, {"lr", 2e-3}, {"warmup", 10}, {"log_every", 20}}},
      {"sampler", {{"num_steps", 10}}},
      {"localization", {{"sparsity_pct", 10.0}, {"tau", 3}}},
      {"attack", {{"samples_per_prompt", 6}}},
      {"analysis", {{"num_subsets", 3}, {"subset_size", 2}, {"random_iou_trials", 3}}},
      {"evaluation", {{"quality_samples", 4}, {"heldout_per_class", 8}, {"pca_components", 4}}},
  };
  return run_config_from_json(j);
}

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  return rng.normal_matrix<float>(r, c, scale);
}

}  // namespace memsub::test
