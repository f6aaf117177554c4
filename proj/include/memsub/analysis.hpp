#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "memsub/errors.hpp"
#include "memsub/localization.hpp"
#include "memsub/rng.hpp"

namespace memsub {

// ---------------------------------------------------------------------------
// Prompt collections

struct PromptCollection {
  std::size_t subset_size = 0;
  std::vector<std::vector<int>> subsets;

  std::size_t count() const { return subsets.size(); }
};

/// N subsets of m distinct prompts each, drawn without replacement from
/// `pool` (each subset independently). Subsets are made pairwise distinct when
/// the pool admits enough combinations. With `cover_holdout`, the collection
/// is redrawn until every pool prompt is missing from at least one subset, so
/// each prompt lands in some held-out test set.
inline PromptCollection sample_collection(std::span<const int> pool, std::size_t n, std::size_t m,
                                          Rng& rng, bool cover_holdout = false) {
  std::vector<int> uniq(pool.begin(), pool.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (uniq.size() != pool.size()) throw ArgumentError("collection: pool has repeated prompts");
  if (m == 0 || m > pool.size()) {
    throw ArgumentError("collection: subset size " + std::to_string(m) + " with pool of " +
                        std::to_string(pool.size()));
  }
  // C(|pool|, m), saturating; only used to decide whether distinct subsets exist.
  double combos = 1.0;
  for (std::size_t i = 0; i < m; ++i) combos = combos * double(pool.size() - i) / double(i + 1);
  const bool want_distinct = combos >= double(n);

  if (cover_holdout && m == pool.size()) {
    throw ArgumentError("collection: subsets spanning the whole pool leave nothing held out");
  }
  for (int attempt = 0; attempt < 10000; ++attempt) {
    PromptCollection pc;
    pc.subset_size = m;
    std::set<std::vector<int>> seen;
    while (pc.subsets.size() < n) {
      std::vector<int> p = uniq;
      rng.shuffle(p.begin(), p.end());
      p.resize(m);
      std::sort(p.begin(), p.end());
      if (want_distinct && !seen.insert(p).second) continue;
      pc.subsets.push_back(std::move(p));
    }
    if (!cover_holdout) return pc;
    bool covered = true;
    for (int q : uniq) {
      covered = std::any_of(pc.subsets.begin(), pc.subsets.end(), [q](const std::vector<int>& s) {
        return !std::binary_search(s.begin(), s.end(), q);
      });
      if (!covered) break;
    }
    if (covered) return pc;
  }
  throw ArgumentError("collection: could not hold out every prompt; increase the number of subsets");
}

// ---------------------------------------------------------------------------
// Set statistics

inline double density(const CoordSet& v, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ShapeError("density: empty layer shape");
  return 100.0 * double(v.size()) / (double(rows) * double(cols));
}

/// |A∩B| / |A∪B|, with the empty-vs-empty case defined as 0.
inline double iou(const CoordSet& a, const CoordSet& b) {
  const auto inter = intersection_size(a, b);
  const auto uni = a.size() + b.size() - inter;
  return uni ? double(inter) / double(uni) : 0.0;
}

/// Mean IOU over all pairs i≠j.
inline double pairwise_iou(const std::vector<CoordSet>& masks) {
  if (masks.size() < 2) throw ArgumentError("pairwise_iou: need at least two masks");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < masks.size(); ++i)
    for (std::size_t j = i + 1; j < masks.size(); ++j, ++pairs) sum += iou(masks[i], masks[j]);
  return sum / double(pairs);
}

/// Whole-mask coordinate set with the layer folded into the row index, so
/// set statistics can run over every layer at once.
inline CoordSet flatten_mask(const NeuronMask& m) {
  CoordSet out;
  for (const auto& [l, s] : m.layers)
    for (const auto& c : s) out.push_back({std::uint32_t(l * m.rows + c.row), c.col});
  return normalize(std::move(out));
}

/// Monte-Carlo IOU of two independent uniform masks, each holding
/// round(density·rows·cols) coordinates.
inline double expected_random_iou(double density_pct, std::size_t rows, std::size_t cols,
                                  std::size_t trials, Rng& rng) {
  if (trials == 0) throw ArgumentError("expected_random_iou: trials must be >= 1");
  if (rows == 0 || cols == 0) throw ShapeError("expected_random_iou: empty layer shape");
  if (!(density_pct >= 0.0 && density_pct <= 100.0)) {
    throw ArgumentError("expected_random_iou: density must be a percentage");
  }
  const std::size_t n = rows * cols;
  const auto k = static_cast<std::size_t>(std::llround(density_pct / 100.0 * double(n)));
  auto draw = [&] {
    // Floyd's algorithm: k distinct indices in [0, n).
    std::set<std::size_t> picked;
    for (std::size_t j = n - k; j < n; ++j) {
      const auto r = std::size_t(rng.uniform_index(j + 1));
      if (!picked.insert(r).second) picked.insert(j);
    }
    CoordSet s;
    s.reserve(k);
    for (auto idx : picked) s.push_back({std::uint32_t(idx / cols), std::uint32_t(idx % cols)});
    return s;
  };
  double sum = 0.0;
  for (std::size_t t = 0; t < trials; ++t) sum += iou(draw(), draw());
  return sum / double(trials);
}

struct Marginals {
  std::vector<double> per_layer;     ///< mean over timesteps
  std::vector<double> per_timestep;  ///< mean over layers
};

/// grid[t][l] -> means along each axis.
inline Marginals marginals(const std::vector<std::vector<double>>& grid) {
  if (grid.empty() || grid.front().empty()) throw ArgumentError("marginals: empty grid");
  const std::size_t L = grid.front().size();
  Marginals m{std::vector<double>(L, 0.0), {}};
  for (const auto& row : grid) {
    if (row.size() != L) throw ArgumentError("marginals: ragged grid");
    double s = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      m.per_layer[l] += row[l];
      s += row[l];
    }
    m.per_timestep.push_back(s / double(L));
  }
  for (auto& v : m.per_layer) v /= double(grid.size());
  return m;
}

// ---------------------------------------------------------------------------
// Statistics over a collection of localization results

struct LocalizationStats {
  std::vector<int> timesteps;       ///< grid rows
  std::vector<std::size_t> layers;  ///< grid columns
  /// density[k][ti][li]: percent, subset k
  std::vector<std::vector<std::vector<double>>> density;
  /// iou[ti][li]: mean pairwise IOU across subsets (empty if fewer than 2)
  std::vector<std::vector<double>> iou;
  /// aggregated mask, per layer: density[k][li] and mean pairwise IOU [li]
  std::vector<std::vector<double>> mask_density;
  std::vector<double> mask_iou;
  double overall_iou = 0.0;  ///< over whole flattened masks; 0 with a single subset

  bool has_iou() const { return !iou.empty(); }
};

inline LocalizationStats localization_stats(const std::vector<LocalizationResult>& results) {
  if (results.empty()) throw ArgumentError("stats: no localization results");
  const auto& first = results.front();
  LocalizationStats st;
  for (const auto& [t, sets] : first.per_timestep) st.timesteps.push_back(t);
  std::sort(st.timesteps.rbegin(), st.timesteps.rend());
  for (const auto& [l, s] : first.mask.layers) st.layers.push_back(l);
  const std::size_t rows = first.mask.rows, cols = first.mask.cols;
  for (const auto& r : results) {
    if (r.mask.rows != rows || r.mask.cols != cols || r.per_timestep.size() != st.timesteps.size()) {
      throw ArgumentError("stats: results come from different configurations");
    }
  }

  auto layer_set = [&](const LocalizationResult& r, int t, std::size_t l) -> const CoordSet& {
    const auto ts = r.per_timestep.find(t);
    if (ts == r.per_timestep.end()) throw ArgumentError("stats: missing timestep " + std::to_string(t));
    const auto ls = ts->second.find(l);
    if (ls == ts->second.end()) throw ArgumentError("stats: missing layer " + std::to_string(l));
    return ls->second;
  };

  for (const auto& r : results) {
    std::vector<std::vector<double>> grid;
    for (int t : st.timesteps) {
      std::vector<double> row;
      for (auto l : st.layers) row.push_back(density(layer_set(r, t, l), rows, cols));
      grid.push_back(std::move(row));
    }
    st.density.push_back(std::move(grid));
    std::vector<double> md;
    for (auto l : st.layers) md.push_back(density(r.mask.layers.at(l), rows, cols));
    st.mask_density.push_back(std::move(md));
  }

  if (results.size() >= 2) {
    for (int t : st.timesteps) {
      std::vector<double> row;
      for (auto l : st.layers) {
        std::vector<CoordSet> sets;
        for (const auto& r : results) sets.push_back(layer_set(r, t, l));
        row.push_back(pairwise_iou(sets));
      }
      st.iou.push_back(std::move(row));
    }
    for (auto l : st.layers) {
      std::vector<CoordSet> sets;
      for (const auto& r : results) sets.push_back(r.mask.layers.at(l));
      st.mask_iou.push_back(pairwise_iou(sets));
    }
    std::vector<CoordSet> flat;
    for (const auto& r : results) flat.push_back(flatten_mask(r.mask));
    st.overall_iou = pairwise_iou(flat);
  }
  return st;
}

/// Long-format CSV: t, l, subset_i, subset_j, metric, value. Aggregated-mask
/// rows use t = -1; single-subset rows leave subset_j empty.
inline void write_stats_csv(std::ostream& os, const LocalizationStats& st) {
  os << "t,l,subset_i,subset_j,metric,value\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  for (std::size_t k = 0; k < st.density.size(); ++k)
    for (std::size_t ti = 0; ti < st.timesteps.size(); ++ti)
      for (std::size_t li = 0; li < st.layers.size(); ++li)
        os << st.timesteps[ti] << ',' << st.layers[li] << ',' << k << ",,density_pct,"
           << num(st.density[k][ti][li]) << '\n';
  for (std::size_t ti = 0; ti < st.iou.size(); ++ti)
    for (std::size_t li = 0; li < st.layers.size(); ++li)
      os << st.timesteps[ti] << ',' << st.layers[li] << ",all,all,mean_pairwise_iou,"
         << num(st.iou[ti][li]) << '\n';
  for (std::size_t k = 0; k < st.mask_density.size(); ++k)
    for (std::size_t li = 0; li < st.layers.size(); ++li)
      os << "-1," << st.layers[li] << ',' << k << ",,density_pct," << num(st.mask_density[k][li]) << '\n';
  for (std::size_t li = 0; li < st.mask_iou.size(); ++li)
    os << "-1," << st.layers[li] << ",all,all,mean_pairwise_iou," << num(st.mask_iou[li]) << '\n';
}

}  // namespace memsub
