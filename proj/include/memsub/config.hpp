#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "memsub/attack.hpp"
#include "memsub/dataset.hpp"
#include "memsub/diffusion.hpp"
#include "memsub/json_util.hpp"
#include "memsub/localization.hpp"
#include "memsub/model.hpp"

namespace memsub {

inline constexpr const char* kRunConfigSchema = "memsub.run/1";

struct AnalysisConfig {
  std::size_t num_subsets = 5;  ///< N
  std::size_t subset_size = 5;  ///< m
  std::size_t random_iou_trials = 20;
};

struct EvaluationConfig {
  std::size_t quality_samples = 20;  ///< generations per prompt for the quality report
  std::size_t heldout_per_class = 40;
  std::size_t pca_components = 16;
};

/// Everything a pipeline run depends on. Component seeds are not set
/// directly; they are all derived from `seed`.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "run";
  std::string dataset_dir;  ///< empty = <output_dir>/dataset
  std::size_t threads = 1;
  DatasetSpec dataset;
  ModelConfig model;
  TrainConfig train;
  SamplerConfig sampler;
  LocalizationConfig localization;
  AttackConfig attack;
  AnalysisConfig analysis;
  EvaluationConfig evaluation;

  std::filesystem::path out() const { return output_dir; }
  std::filesystem::path data_dir() const {
    return dataset_dir.empty() ? out() / "dataset" : std::filesystem::path(dataset_dir);
  }
};

// Stream ids for derive_seed(run.seed, ...).
namespace seed_stream {
inline constexpr std::uint64_t dataset = 0xDA7A;
inline constexpr std::uint64_t init = 0x1417;
inline constexpr std::uint64_t train = 0x7EA1;
inline constexpr std::uint64_t capture = 0xCA97;
inline constexpr std::uint64_t attack = 0xA77C;
inline constexpr std::uint64_t collection = 0xC011;
inline constexpr std::uint64_t quality = 0x0A11;
inline constexpr std::uint64_t baseline = 0xBA5E;
}  // namespace seed_stream

/// Fills every component seed from the global one.
inline void resolve_seeds(RunConfig& c) {
  c.dataset.seed = derive_seed(c.seed, seed_stream::dataset);
  c.train.seed = derive_seed(c.seed, seed_stream::train);
  c.sampler.seed = derive_seed(c.seed, seed_stream::capture);
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  using nlohmann::json;
  return {
      {"schema", kRunConfigSchema},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"dataset_dir", c.dataset_dir},
      {"threads", c.threads},
      {"dataset",
       {{"num_classes", c.dataset.num_classes},
        {"images_per_class", c.dataset.images_per_class},
        {"num_duplicated", c.dataset.num_duplicated},
        {"duplicate_copies", c.dataset.duplicate_copies},
        {"image_size", c.dataset.image_size}}},
      {"model",
       {{"hidden", c.model.hidden},
        {"inner", c.model.inner},
        {"depth", c.model.depth},
        {"timesteps", c.model.timesteps}}},
      {"train",
       {{"iterations", c.train.iterations},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"warmup", c.train.warmup},
        {"final_lr_ratio", c.train.final_lr_ratio},
        {"cond_drop_prob", c.train.cond_drop_prob},
        {"log_every", c.train.log_every}}},
      {"sampler", {{"guidance_scale", c.sampler.guidance_scale}, {"num_steps", c.sampler.num_steps}}},
      {"localization", c.localization},
      {"attack", c.attack},
      {"analysis",
       {{"num_subsets", c.analysis.num_subsets},
        {"subset_size", c.analysis.subset_size},
        {"random_iou_trials", c.analysis.random_iou_trials}}},
      {"evaluation",
       {{"quality_samples", c.evaluation.quality_samples},
        {"heldout_per_class", c.evaluation.heldout_per_class},
        {"pca_components", c.evaluation.pca_components}}},
  };
}

inline void validate_run_config(const RunConfig& c) {
  if (c.threads == 0) throw ArgumentError("config: threads must be >= 1");
  if (c.output_dir.empty()) throw ArgumentError("config: output_dir must not be empty");
  if (c.model.hidden == 0 || c.model.inner == 0 || c.model.depth == 0) {
    throw ArgumentError("config: model dimensions must be positive");
  }
  if (c.model.timesteps < 2) throw ArgumentError("config: need at least two timesteps");
  if (c.train.batch_size == 0) throw ArgumentError("config: batch_size must be >= 1");
  if (!(c.train.lr > 0.0)) throw ArgumentError("config: lr must be positive");
  if (!(c.train.final_lr_ratio >= 0.0 && c.train.final_lr_ratio <= 1.0)) {
    throw ArgumentError("config: final_lr_ratio must be in [0,1]");
  }
  if (!(c.train.cond_drop_prob >= 0.0 && c.train.cond_drop_prob < 1.0)) {
    throw ArgumentError("config: cond_drop_prob must be in [0,1)");
  }
  if (c.sampler.guidance_scale < 0.0) throw ArgumentError("config: guidance_scale must be >= 0");
  if (c.sampler.num_steps == 0 || c.sampler.num_steps > c.model.timesteps) {
    throw ArgumentError("config: sampler.num_steps must be in [1, timesteps]");
  }
  if (c.localization.tau == 0 || c.localization.tau > c.sampler.num_steps) {
    throw ArgumentError("config: localization.tau must be in [1, num_steps]");
  }
  if (!(c.localization.sparsity_pct > 0.0 && c.localization.sparsity_pct <= 100.0)) {
    throw ArgumentError("config: sparsity_pct must be in (0, 100]");
  }
  for (auto l : c.localization.layers)
    if (l >= c.model.depth) throw ArgumentError("config: localization layer " + std::to_string(l) + " out of range");
  c.attack.validate();
  if (c.analysis.num_subsets == 0 || c.analysis.subset_size == 0) {
    throw ArgumentError("config: analysis needs at least one subset of at least one prompt");
  }
  if (c.evaluation.pca_components == 0 || c.evaluation.quality_samples == 0) {
    throw ArgumentError("config: evaluation sizes must be positive");
  }
}

/// Parses a run config; unknown keys anywhere are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  StrictObject top(j, "config");
  std::string schema = kRunConfigSchema;
  top.opt("schema", schema)
      .opt("seed", c.seed)
      .opt("output_dir", c.output_dir)
      .opt("dataset_dir", c.dataset_dir)
      .opt("threads", c.threads);
  if (schema != kRunConfigSchema) throw FormatError("config: unsupported schema '" + schema + "'");
  if (const auto* d = top.sub("dataset")) {
    StrictObject(*d, "config.dataset")
        .opt("num_classes", c.dataset.num_classes)
        .opt("images_per_class", c.dataset.images_per_class)
        .opt("num_duplicated", c.dataset.num_duplicated)
        .opt("duplicate_copies", c.dataset.duplicate_copies)
        .opt("image_size", c.dataset.image_size)
        .finish();
  }
  if (const auto* m = top.sub("model")) {
    StrictObject(*m, "config.model")
        .opt("hidden", c.model.hidden)
        .opt("inner", c.model.inner)
        .opt("depth", c.model.depth)
        .opt("timesteps", c.model.timesteps)
        .finish();
  }
  if (const auto* t = top.sub("train")) {
    StrictObject(*t, "config.train")
        .opt("iterations", c.train.iterations)
        .opt("batch_size", c.train.batch_size)
        .opt("lr", c.train.lr)
        .opt("warmup", c.train.warmup)
        .opt("final_lr_ratio", c.train.final_lr_ratio)
        .opt("cond_drop_prob", c.train.cond_drop_prob)
        .opt("log_every", c.train.log_every)
        .finish();
  }
  if (const auto* s = top.sub("sampler")) {
    StrictObject(*s, "config.sampler")
        .opt("guidance_scale", c.sampler.guidance_scale)
        .opt("num_steps", c.sampler.num_steps)
        .finish();
  }
  if (const auto* l = top.sub("localization")) c.localization = l->get<LocalizationConfig>();
  if (const auto* a = top.sub("attack")) c.attack = a->get<AttackConfig>();
  if (const auto* a = top.sub("analysis")) {
    StrictObject(*a, "config.analysis")
        .opt("num_subsets", c.analysis.num_subsets)
        .opt("subset_size", c.analysis.subset_size)
        .opt("random_iou_trials", c.analysis.random_iou_trials)
        .finish();
  }
  if (const auto* e = top.sub("evaluation")) {
    StrictObject(*e, "config.evaluation")
        .opt("quality_samples", c.evaluation.quality_samples)
        .opt("heldout_per_class", c.evaluation.heldout_per_class)
        .opt("pca_components", c.evaluation.pca_components)
        .finish();
  }
  top.finish();
  c.model.image_size = c.dataset.image_size;
  c.model.num_labels = c.dataset.num_classes + c.dataset.num_duplicated;
  validate_run_config(c);
  resolve_seeds(c);
  return c;
}

inline RunConfig default_run_config() { return run_config_from_json(nlohmann::json::object()); }

inline RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ArgumentError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace memsub
