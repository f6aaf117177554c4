#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memsub/json_util.hpp"
#include "memsub/model.hpp"
#include "memsub/probe.hpp"

namespace memsub {

/// (row, col) coordinate inside a w_out matrix.
struct Coord {
  std::uint32_t row;
  std::uint32_t col;
  friend auto operator<=>(const Coord&, const Coord&) = default;
};

/// Sorted, duplicate-free list of coordinates.
using CoordSet = std::vector<Coord>;

inline CoordSet normalize(CoordSet s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

inline CoordSet set_union(const CoordSet& a, const CoordSet& b) {
  CoordSet out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline std::size_t intersection_size(const CoordSet& a, const CoordSet& b) {
  std::size_t n = 0;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end() && ib != b.end();) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++n, ++ia, ++ib;
    }
  }
  return n;
}

/// Wanda importance: S(i,j) = |W(i,j)| · ‖H(j,:)‖₂.
/// W is d × d' (output rows, input channels); H is d' × n (one column per sample).
inline Matrix wanda_scores(const Matrix& W, const Matrix& H) {
  if (H.rows() != W.cols()) {
    throw ShapeError("wanda_scores: W " + shape_str(W) + " needs H with " + std::to_string(W.cols()) +
                     " rows, got " + shape_str(H));
  }
  std::vector<float> norms(H.rows());
  for (std::size_t j = 0; j < H.rows(); ++j) {
    double s = 0.0;
    for (float v : H.row(j)) s += double(v) * double(v);
    norms[j] = float(std::sqrt(s));
  }
  Matrix S(W.rows(), W.cols());
  for (std::size_t i = 0; i < W.rows(); ++i)
    for (std::size_t j = 0; j < W.cols(); ++j) S(i, j) = std::abs(W(i, j)) * norms[j];
  return S;
}

/// Number of entries selected per row: max(min_per_row, floor(pct/100 · cols)).
inline std::size_t top_count(std::size_t cols, double sparsity_pct, std::size_t min_per_row = 1) {
  const auto k = static_cast<std::size_t>(std::floor(sparsity_pct / 100.0 * double(cols) + 1e-9));
  return std::min(cols, std::max(min_per_row, k));
}

/// Per row, the k highest-scoring coordinates. Ties go to the lower column.
inline CoordSet top_set(const Matrix& S, double sparsity_pct, std::size_t min_per_row = 1) {
  if (!(sparsity_pct > 0.0 && sparsity_pct < 100.0)) {
    throw ArgumentError("top_set: sparsity_pct must be in (0, 100)");
  }
  const std::size_t k = top_count(S.cols(), sparsity_pct, min_per_row);
  CoordSet out;
  out.reserve(S.rows() * k);
  std::vector<std::uint32_t> idx(S.cols());
  for (std::size_t i = 0; i < S.rows(); ++i) {
    std::iota(idx.begin(), idx.end(), 0u);
    const auto row = S.row(i);
    const auto better = [&](std::uint32_t a, std::uint32_t b) {
      return row[a] != row[b] ? row[a] > row[b] : a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + long(k), idx.end(), better);
    std::vector<std::uint32_t> chosen(idx.begin(), idx.begin() + long(k));
    std::sort(chosen.begin(), chosen.end());
    for (auto j : chosen) out.push_back({std::uint32_t(i), j});
  }
  return out;
}

/// V = {(i,j) ∈ A : S_mem(i,j) > S_null(i,j)}.
inline CoordSet memorized_set(const Matrix& S_mem, const Matrix& S_null, const CoordSet& A) {
  if (!S_mem.same_shape(S_null)) {
    throw ShapeError("memorized_set: " + shape_str(S_mem) + " vs " + shape_str(S_null));
  }
  CoordSet out;
  for (const auto& c : A) {
    if (c.row >= S_mem.rows() || c.col >= S_mem.cols()) throw IndexError("memorized_set: coordinate out of range");
    if (S_mem(c.row, c.col) > S_null(c.row, c.col)) out.push_back(c);
  }
  return normalize(std::move(out));
}

struct LocalizationConfig {
  double sparsity_pct = 1.0;
  std::size_t tau = 10;          ///< earliest denoising steps to aggregate
  std::size_t min_per_row = 1;
  std::vector<std::size_t> layers;  ///< empty = all FFN layers
  std::size_t memory_budget_bytes = 64u << 20;
};

inline void to_json(nlohmann::json& j, const LocalizationConfig& c) {
  j = {{"sparsity_pct", c.sparsity_pct}, {"tau", c.tau}, {"min_per_row", c.min_per_row},
       {"layers", c.layers}, {"memory_budget_bytes", c.memory_budget_bytes}};
}
inline void from_json(const nlohmann::json& j, LocalizationConfig& c) {
  StrictObject(j, "localization")
      .opt("sparsity_pct", c.sparsity_pct)
      .opt("tau", c.tau)
      .opt("min_per_row", c.min_per_row)
      .opt("layers", c.layers)
      .opt("memory_budget_bytes", c.memory_budget_bytes)
      .finish();
}

/// Memorized-neuron coordinates per FFN layer.
struct NeuronMask {
  std::size_t rows = 0;  ///< shape of every w_out
  std::size_t cols = 0;
  std::map<std::size_t, CoordSet> layers;
  // metadata
  double sparsity_pct = 0.0;
  std::size_t tau = 0;
  std::vector<int> timesteps;
  std::vector<int> prompts;

  std::size_t cardinality() const {
    std::size_t n = 0;
    for (const auto& [l, s] : layers) n += s.size();
    return n;
  }
  friend bool operator==(const NeuronMask&, const NeuronMask&) = default;
};

/// V sets of one timestep, by layer.
using LayerSets = std::map<std::size_t, CoordSet>;

/// Per-layer union of the given timesteps' V sets.
inline NeuronMask aggregate_mask(const std::vector<LayerSets>& per_timestep, std::size_t rows,
                                 std::size_t cols) {
  if (per_timestep.empty()) throw ArgumentError("aggregate_mask: need at least one timestep");
  NeuronMask m;
  m.rows = rows;
  m.cols = cols;
  m.tau = per_timestep.size();
  for (const auto& sets : per_timestep) {
    for (const auto& [l, s] : sets) m.layers[l] = set_union(m.layers[l], s);
  }
  return m;
}

inline void check_mask(const DenoiserParams& params, const NeuronMask& mask) {
  for (const auto& [l, coords] : mask.layers) {
    if (l >= params.ffn_blocks.size()) {
      throw MaskIntegrityError("mask references layer " + std::to_string(l) + " but model has " +
                               std::to_string(params.ffn_blocks.size()));
    }
    const auto& W = params.ffn_blocks[l].w_out;
    if ((mask.rows || mask.cols) && (mask.rows != W.rows() || mask.cols != W.cols())) {
      throw MaskIntegrityError("mask layer shape " + shape_str(mask.rows, mask.cols) +
                               " differs from w_out " + shape_str(W));
    }
    for (const auto& c : coords) {
      if (c.row >= W.rows() || c.col >= W.cols()) {
        throw MaskIntegrityError("mask coordinate (" + std::to_string(c.row) + "," +
                                 std::to_string(c.col) + ") outside w_out " + shape_str(W));
      }
    }
  }
}

/// Copy of params with the masked w_out entries set to zero.
inline DenoiserParams apply_mask(const DenoiserParams& params, const NeuronMask& mask) {
  check_mask(params, mask);
  DenoiserParams out = params;
  for (const auto& [l, coords] : mask.layers) {
    auto& W = out.ffn_blocks[l].w_out;
    for (const auto& c : coords) W(c.row, c.col) = 0.0f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// End-to-end localization for one prompt subset.

struct LocalizationResult {
  NeuronMask mask;
  /// V^{t,l} for every aggregated timestep, keyed by t.
  std::map<int, LayerSets> per_timestep;
};

/// The τ earliest denoising timesteps of the sampling trajectory (T-1, T-2, ...).
inline std::vector<int> earliest_timesteps(const SamplerConfig& cfg, std::size_t T, std::size_t tau) {
  const auto traj = sampling_timesteps(cfg.num_steps, T);
  if (tau == 0 || tau > traj.size()) throw ArgumentError("localize: tau must be in [1, num_steps]");
  return {traj.begin(), traj.begin() + long(tau)};
}

inline LocalizationResult localize(const DenoiserParams& params, std::span<const int> prompts,
                                   const LocalizationConfig& cfg, const SamplerConfig& sampler,
                                   const NoiseSchedule& schedule) {
  std::vector<std::size_t> layers = cfg.layers;
  if (layers.empty()) {
    layers.resize(params.config.depth);
    std::iota(layers.begin(), layers.end(), std::size_t{0});
  }
  const auto ts = earliest_timesteps(sampler, params.config.timesteps, cfg.tau);
  const auto chunks = plan_capture_chunks(ts, prompts.size() + 1, params.config.inner, layers.size(),
                                          cfg.memory_budget_bytes);

  LocalizationResult res;
  for (const auto& chunk : chunks) {
    const auto mem = capture(params, prompts, sampler, schedule, chunk, layers);
    const auto null = capture_null(params, prompts.size(), sampler, schedule, chunk, layers);
    for (int t : chunk) {
      auto& sets = res.per_timestep[t];
      for (auto l : layers) {
        const auto& W = params.ffn_blocks[l].w_out;
        const auto S_mem = wanda_scores(W, mem.at(t, l));
        const auto S_null = wanda_scores(W, null.at(t, l));
        sets[l] = memorized_set(S_mem, S_null, top_set(S_mem, cfg.sparsity_pct, cfg.min_per_row));
      }
    }
  }
  std::vector<LayerSets> all;
  for (int t : ts) all.push_back(res.per_timestep.at(t));
  res.mask = aggregate_mask(all, params.config.hidden, params.config.inner);
  res.mask.sparsity_pct = cfg.sparsity_pct;
  res.mask.timesteps = ts;
  res.mask.prompts.assign(prompts.begin(), prompts.end());
  return res;
}

// ---------------------------------------------------------------------------
// Mask file: canonical JSON (sorted layers, sorted coordinates).

inline constexpr const char* kMaskSchema = "memsub.mask/1";

inline nlohmann::json mask_to_json(const NeuronMask& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& [l, coords] : m.layers) {
    nlohmann::json cs = nlohmann::json::array();
    for (const auto& c : coords) cs.push_back({c.row, c.col});
    layers.push_back({{"layer", l}, {"coords", cs}});
  }
  return {{"schema", kMaskSchema},
          {"shape", {m.rows, m.cols}},
          {"config", {{"sparsity_pct", m.sparsity_pct}, {"tau", m.tau}, {"timesteps", m.timesteps}}},
          {"prompts", m.prompts},
          {"layers", layers}};
}

inline NeuronMask mask_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kMaskSchema) throw FormatError("mask: unsupported schema");
  NeuronMask m;
  m.rows = j.at("shape").at(0);
  m.cols = j.at("shape").at(1);
  const auto& c = j.at("config");
  m.sparsity_pct = c.at("sparsity_pct");
  m.tau = c.at("tau");
  m.timesteps = c.at("timesteps").get<std::vector<int>>();
  m.prompts = j.at("prompts").get<std::vector<int>>();
  for (const auto& e : j.at("layers")) {
    CoordSet cs;
    for (const auto& p : e.at("coords")) cs.push_back({p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()});
    m.layers[e.at("layer").get<std::size_t>()] = normalize(std::move(cs));
  }
  return m;
}

inline void save_mask(const std::filesystem::path& path, const NeuronMask& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << mask_to_json(m).dump() << "\n";
}

inline NeuronMask load_mask(const std::filesystem::path& path) {
  return mask_from_json(nlohmann::json::parse(read_file(path)));
}

}  // namespace memsub
