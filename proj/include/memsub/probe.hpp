#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "memsub/checkpoint.hpp"
#include "memsub/diffusion.hpp"

namespace memsub {

/// Key of a recorded activation block: (diffusion timestep t, FFN layer l).
struct StepLayer {
  int t;
  std::size_t layer;
  friend auto operator<=>(const StepLayer&, const StepLayer&) = default;
};

/// Recorded FFN hidden activations (the inputs of each w_out).
///
/// For every (t, l), `blocks` holds a d' × (n · tokens) matrix whose column
/// block k is prompt k's activation at that step. The toy denoiser has one
/// token per image.
struct ActivationBatch {
  std::size_t tokens = 1;
  std::vector<int> prompt_ids;
  std::vector<int> timesteps;
  std::vector<std::size_t> layers;
  std::map<StepLayer, Matrix> blocks;

  const Matrix& at(int t, std::size_t layer) const {
    auto it = blocks.find({t, layer});
    if (it == blocks.end()) {
      throw IndexError("activation batch has no block for t=" + std::to_string(t) +
                       " layer=" + std::to_string(layer));
    }
    return it->second;
  }

  std::size_t bytes() const {
    std::size_t b = 0;
    for (const auto& [k, m] : blocks) b += m.size() * sizeof(float);
    return b;
  }
};

namespace detail {

inline void check_capture_request(const DenoiserParams& params, const SamplerConfig& cfg,
                                  std::span<const int> timesteps, std::span<const std::size_t> layers) {
  const auto traj = sampling_timesteps(cfg.num_steps, params.config.timesteps);
  for (int t : timesteps) {
    if (std::find(traj.begin(), traj.end(), t) == traj.end()) {
      throw ArgumentError("capture: timestep " + std::to_string(t) + " is not on the sampling trajectory");
    }
  }
  for (auto l : layers) {
    if (l >= params.config.depth) throw ArgumentError("capture: layer " + std::to_string(l) + " out of range");
  }
}

/// Runs one trajectory for `label` and returns its activations (d' × 1) per
/// requested (t, l).
inline std::map<StepLayer, Matrix> record_trajectory(const DenoiserParams& params, int label,
                                                     const SamplerConfig& cfg,
                                                     const NoiseSchedule& schedule,
                                                     const std::set<int>& want_t,
                                                     const std::set<std::size_t>& want_l) {
  std::map<StepLayer, Matrix> rec;
  SamplingHook hook = [&](std::size_t, int t, std::size_t layer, const Matrix& hidden) {
    if (!want_t.count(t) || !want_l.count(layer)) return;
    rec[{t, layer}] = transpose(hidden);
  };
  sample(params, label, cfg, schedule, hook);
  return rec;
}

inline Matrix hstack_blocks(const std::vector<const Matrix*>& parts) {
  std::size_t cols = 0;
  for (auto* p : parts) cols += p->cols();
  Matrix out(parts.front()->rows(), cols);
  std::size_t c0 = 0;
  for (auto* p : parts) {
    for (std::size_t r = 0; r < p->rows(); ++r)
      for (std::size_t c = 0; c < p->cols(); ++c) out(r, c0 + c) = (*p)(r, c);
    c0 += p->cols();
  }
  return out;
}

}  // namespace detail

/// Records h^{t,l}(p) along each prompt's guided sampling trajectory
/// (conditional branch only) and stacks prompts column-wise. All prompts share
/// cfg.seed, so every prompt starts from the same initial latent.
inline ActivationBatch capture(const DenoiserParams& params, std::span<const int> prompts,
                               const SamplerConfig& cfg, const NoiseSchedule& schedule,
                               std::span<const int> timesteps, std::span<const std::size_t> layers) {
  if (prompts.empty()) throw ArgumentError("capture: empty prompt set");
  for (int p : prompts) {
    if (p <= 0 || std::size_t(p) > params.config.num_labels) {
      throw ArgumentError("capture: prompt label " + std::to_string(p) + " is not a valid non-null label");
    }
  }
  detail::check_capture_request(params, cfg, timesteps, layers);
  const std::set<int> want_t(timesteps.begin(), timesteps.end());
  const std::set<std::size_t> want_l(layers.begin(), layers.end());

  std::vector<std::map<StepLayer, Matrix>> per_prompt;
  per_prompt.reserve(prompts.size());
  for (int p : prompts) per_prompt.push_back(detail::record_trajectory(params, p, cfg, schedule, want_t, want_l));

  ActivationBatch batch;
  batch.prompt_ids.assign(prompts.begin(), prompts.end());
  batch.timesteps.assign(want_t.rbegin(), want_t.rend());
  batch.layers.assign(want_l.begin(), want_l.end());
  for (const auto& key : per_prompt.front()) {
    std::vector<const Matrix*> parts;
    for (const auto& rec : per_prompt) parts.push_back(&rec.at(key.first));
    batch.blocks[key.first] = detail::hstack_blocks(parts);
  }
  return batch;
}

/// Null-prompt activations along the unconditional trajectory for cfg.seed,
/// tiled n times so the column count matches an n-prompt capture.
inline ActivationBatch capture_null(const DenoiserParams& params, std::size_t n, const SamplerConfig& cfg,
                                    const NoiseSchedule& schedule, std::span<const int> timesteps,
                                    std::span<const std::size_t> layers) {
  if (n == 0) throw ArgumentError("capture_null: n must be >= 1");
  detail::check_capture_request(params, cfg, timesteps, layers);
  const std::set<int> want_t(timesteps.begin(), timesteps.end());
  const std::set<std::size_t> want_l(layers.begin(), layers.end());
  const auto rec = detail::record_trajectory(params, kNullLabel, cfg, schedule, want_t, want_l);

  ActivationBatch batch;
  batch.prompt_ids.assign(n, kNullLabel);
  batch.timesteps.assign(want_t.rbegin(), want_t.rend());
  batch.layers.assign(want_l.begin(), want_l.end());
  for (const auto& [key, m] : rec) {
    std::vector<const Matrix*> parts(n, &m);
    batch.blocks[key] = detail::hstack_blocks(parts);
  }
  return batch;
}

/// Splits `timesteps` into chunks whose activation batches (n prompts, all
/// layers) stay within budget_bytes; a chunk always holds at least one step.
inline std::vector<std::vector<int>> plan_capture_chunks(std::span<const int> timesteps, std::size_t n,
                                                         std::size_t inner, std::size_t num_layers,
                                                         std::size_t budget_bytes) {
  const std::size_t per_step = n * inner * num_layers * sizeof(float);
  const std::size_t steps_per_chunk = std::max<std::size_t>(1, per_step ? budget_bytes / per_step : 1);
  std::vector<std::vector<int>> chunks;
  for (std::size_t i = 0; i < timesteps.size(); i += steps_per_chunk) {
    chunks.emplace_back(timesteps.begin() + long(i),
                        timesteps.begin() + long(std::min(timesteps.size(), i + steps_per_chunk)));
  }
  return chunks;
}

// ---------------------------------------------------------------------------
// Activation dump: <stem>.json index + <stem>.bin raw little-endian f32 blocks.

inline constexpr const char* kActivationSchema = "memsub.activations/1";

inline void save_activations(const std::filesystem::path& stem, const ActivationBatch& batch) {
  nlohmann::json idx = {{"schema", kActivationSchema},
                        {"tokens", batch.tokens},
                        {"prompt_ids", batch.prompt_ids},
                        {"timesteps", batch.timesteps},
                        {"layers", batch.layers},
                        {"blocks", nlohmann::json::array()}};
  std::string raw;
  for (const auto& [key, m] : batch.blocks) {
    idx["blocks"].push_back({{"t", key.t},
                             {"layer", key.layer},
                             {"rows", m.rows()},
                             {"cols", m.cols()},
                             {"offset", raw.size()}});
    for (float f : m.values()) detail::put_f32(raw, f);
  }
  const auto bin = std::filesystem::path(stem).replace_extension(".bin");
  const auto js = std::filesystem::path(stem).replace_extension(".json");
  idx["data_file"] = bin.filename().string();
  {
    std::ofstream f(bin, std::ios::binary | std::ios::trunc);
    f.write(raw.data(), long(raw.size()));
  }
  std::ofstream f(js, std::ios::trunc);
  f << idx.dump(2) << "\n";
}

inline ActivationBatch load_activations(const std::filesystem::path& stem) {
  const auto js = std::filesystem::path(stem).replace_extension(".json");
  const auto idx = nlohmann::json::parse(read_file(js));
  if (idx.value("schema", "") != kActivationSchema) throw FormatError("activations: unsupported schema");
  const auto raw = read_file(js.parent_path() / idx.at("data_file").get<std::string>());
  ActivationBatch b;
  b.tokens = idx.at("tokens");
  b.prompt_ids = idx.at("prompt_ids").get<std::vector<int>>();
  b.timesteps = idx.at("timesteps").get<std::vector<int>>();
  b.layers = idx.at("layers").get<std::vector<std::size_t>>();
  for (const auto& e : idx.at("blocks")) {
    const std::size_t rows = e.at("rows"), cols = e.at("cols"), off = e.at("offset");
    if (off + rows * cols * 4 > raw.size()) throw FormatError("activations: block outside data file");
    detail::ByteReader rd(std::string_view(raw).substr(off, rows * cols * 4));
    Matrix m(rows, cols);
    for (auto& f : m.values()) f = rd.f32();
    b.blocks[{e.at("t").get<int>(), e.at("layer").get<std::size_t>()}] = std::move(m);
  }
  return b;
}

}  // namespace memsub
