#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "memsub/checkpoint.hpp"
#include "memsub/dataset.hpp"
#include "memsub/diffusion.hpp"

namespace memsub {

/// Uniform draw with replacement; duplicated images appear once per copy.
inline std::vector<Example> draw_batch(const TrainingSet& data, const TrainConfig& cfg, Rng& rng) {
  std::vector<Example> batch;
  batch.reserve(cfg.batch_size);
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    const auto idx = rng.uniform_index(data.labels.size());
    batch.push_back({data.images.row(idx), data.labels[idx]});
  }
  return batch;
}

struct StepInfo {
  std::size_t iteration;  ///< steps completed
  double loss;
  double lr;
  bool log_point;  ///< every cfg.log_every steps, and the last one
};

/// Called after every optimizer step.
using TrainCallback = std::function<void(const StepInfo&, const DenoiserParams&)>;

/// Runs optimizer steps adam.step .. cfg.iterations-1 and returns the loss of
/// each step run. Stops with DivergenceError on a non-finite loss; params then
/// hold the last finite state.
inline std::vector<double> train(DenoiserParams& params, AdamState<float>& adam, const TrainingSet& data,
                                 const TrainConfig& cfg, const NoiseSchedule& schedule,
                                 const TrainCallback& callback = {}) {
  if (data.labels.empty()) throw ArgumentError("train: empty training set");
  std::vector<double> losses;
  for (std::size_t it = adam.step; it < cfg.iterations; ++it) {
    // Per-step stream keyed by (seed, step) so a resumed run replays the same batches.
    Rng rng(derive_seed(cfg.seed, it));
    const auto batch = draw_batch(data, cfg, rng);
    const double lr = lr_at(cfg, it);
    const double loss = train_step(params, adam, batch, cfg, schedule, rng, lr);
    losses.push_back(loss);
    if (callback) {
      const bool log_point = (cfg.log_every && (it + 1) % cfg.log_every == 0) || it + 1 == cfg.iterations;
      callback({it + 1, loss, lr, log_point}, params);
    }
  }
  return losses;
}

// ---------------------------------------------------------------------------
// Optimizer state sidecar, so an interrupted run resumes bit-identically.
//   "MSOPT1" u64 step, then m and v tensors (f32, for_each_tensor order).

inline std::string encode_adam_state(const AdamState<float>& s) {
  std::string out = "MSOPT1";
  detail::put_u64(out, s.step);
  detail::put_u32(out, static_cast<std::uint32_t>(s.m.size()));
  for (const auto* group : {&s.m, &s.v})
    for (const auto& m : *group) {
      detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
      detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
      for (float f : m.values()) detail::put_f32(out, f);
    }
  return out;
}

inline AdamState<float> decode_adam_state(std::string_view bytes, const DenoiserParams& params) {
  detail::ByteReader in(bytes);
  if (in.raw(6) != "MSOPT1") throw FormatError("optimizer state: bad magic");
  auto s = make_adam_state(params);
  s.step = in.u64();
  if (in.u32() != s.m.size()) throw FormatError("optimizer state: tensor count mismatch");
  for (auto* group : {&s.m, &s.v})
    for (auto& m : *group) {
      const auto r = in.u32(), c = in.u32();
      if (r != m.rows() || c != m.cols()) throw FormatError("optimizer state: tensor shape mismatch");
      for (auto& f : m.values()) f = in.f32();
    }
  if (!in.at_end()) throw FormatError("optimizer state: trailing bytes");
  return s;
}

}  // namespace memsub
