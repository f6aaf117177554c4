#pragma once

// Brute-force reference implementations, written independently of the
// library code they check.

#include <cmath>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "memsub/pipeline.hpp"

namespace memsub::oracle {

using Cell = std::pair<std::uint32_t, std::uint32_t>;

inline std::set<Cell> to_set(const CoordSet& s) {
  std::set<Cell> out;
  for (const auto& c : s) out.insert({c.row, c.col});
  return out;
}

inline std::vector<std::vector<double>> wanda(const Matrix& W, const Matrix& H) {
  std::vector<std::vector<double>> S(W.rows(), std::vector<double>(W.cols()));
  for (std::size_t j = 0; j < W.cols(); ++j) {
    double n2 = 0;
    for (std::size_t k = 0; k < H.cols(); ++k) n2 += double(H(j, k)) * double(H(j, k));
    for (std::size_t i = 0; i < W.rows(); ++i) S[i][j] = std::fabs(double(W(i, j))) * std::sqrt(n2);
  }
  return S;
}

/// (i,j) is kept when fewer than k entries of row i beat it, where a beats b
/// if it scores higher or scores the same at a lower column.
inline std::set<Cell> top(const Matrix& S, std::size_t k) {
  std::set<Cell> out;
  for (std::size_t i = 0; i < S.rows(); ++i)
    for (std::size_t j = 0; j < S.cols(); ++j) {
      std::size_t better = 0;
      for (std::size_t q = 0; q < S.cols(); ++q)
        if (S(i, q) > S(i, j) || (S(i, q) == S(i, j) && q < j)) ++better;
      if (better < k) out.insert({std::uint32_t(i), std::uint32_t(j)});
    }
  return out;
}

inline std::set<Cell> memorized(const Matrix& S_mem, const Matrix& S_null, const std::set<Cell>& A) {
  std::set<Cell> out;
  for (const auto& [i, j] : A)
    if (S_mem(i, j) > S_null(i, j)) out.insert({i, j});
  return out;
}

inline std::map<std::size_t, std::set<Cell>> aggregate(const std::vector<LayerSets>& per_t) {
  std::map<std::size_t, std::set<Cell>> out;
  for (const auto& sets : per_t)
    for (const auto& [l, s] : sets)
      for (const auto& c : s) out[l].insert({c.row, c.col});
  return out;
}

inline double density(const std::set<Cell>& s, std::size_t rows, std::size_t cols) {
  return 100.0 * double(s.size()) / double(rows * cols);
}

inline double mean_pairwise_iou(const std::vector<std::set<Cell>>& sets) {
  double sum = 0;
  int pairs = 0;
  for (std::size_t a = 0; a < sets.size(); ++a)
    for (std::size_t b = a + 1; b < sets.size(); ++b) {
      std::set<Cell> uni = sets[a];
      uni.insert(sets[b].begin(), sets[b].end());
      std::size_t inter = 0;
      for (const auto& c : sets[a]) inter += sets[b].count(c);
      sum += uni.empty() ? 0.0 : double(inter) / double(uni.size());
      ++pairs;
    }
  return sum / pairs;
}

inline double tile_dist(const std::vector<double>& a, const std::vector<double>& b, std::size_t side, std::size_t tile) {
  std::map<std::pair<std::size_t, std::size_t>, double> acc;
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double d = a[y * side + x] - b[y * side + x];
      acc[{y / tile, x / tile}] += d * d;
    }
  double worst = 0;
  for (const auto& [k, v] : acc) worst = std::max(worst, std::sqrt(v));
  return worst;
}

/// Size of a maximum clique by enumerating every vertex subset.
inline std::size_t max_clique_size(const std::vector<std::vector<bool>>& adj) {
  const std::size_t n = adj.size();
  std::size_t best = n ? 1 : 0;
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    const auto size = std::size_t(__builtin_popcount(mask));
    if (size <= best) continue;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i)
      for (std::size_t j = i + 1; j < n && ok; ++j)
        if ((mask >> i & 1) && (mask >> j & 1) && !adj[i][j]) ok = false;
    if (ok) best = size;
  }
  return best;
}

inline bool is_clique(const std::vector<std::vector<bool>>& adj, const std::vector<std::size_t>& c) {
  for (std::size_t a = 0; a < c.size(); ++a)
    for (std::size_t b = a + 1; b < c.size(); ++b)
      if (!adj[c[a]][c[b]]) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Random instance generators

inline Matrix random_scores(Rng& rng, std::size_t r, std::size_t c, bool with_ties) {
  Matrix m(r, c);
  for (auto& v : m.values()) v = with_ties ? float(rng.uniform_index(4)) : float(rng.uniform());
  return m;
}

inline CoordSet random_coords(Rng& rng, std::size_t r, std::size_t c, double p) {
  CoordSet s;
  for (std::uint32_t i = 0; i < r; ++i)
    for (std::uint32_t j = 0; j < c; ++j)
      if (rng.uniform() < p) s.push_back({i, j});
  return s;
}

inline std::vector<std::vector<bool>> random_graph(Rng& rng, std::size_t n, double p) {
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) adj[i][j] = adj[j][i] = rng.uniform() < p;
  return adj;
}

/// Distance matrix realizing `adj` at threshold 1: 0.5 for edges, 2 otherwise.
inline std::vector<std::vector<double>> distances_for(const std::vector<std::vector<bool>>& adj) {
  std::vector<std::vector<double>> d(adj.size(), std::vector<double>(adj.size(), 0.0));
  for (std::size_t i = 0; i < adj.size(); ++i)
    for (std::size_t j = 0; j < adj.size(); ++j)
      if (i != j) d[i][j] = adj[i][j] ? 0.5 : 2.0;
  return d;
}

/// Runs `trials` randomized comparisons of every exact primitive against its
/// oracle; returns the number of mismatches per primitive.
inline std::map<std::string, std::size_t> equivalence_sweep(std::size_t trials, std::uint64_t seed) {
  std::map<std::string, std::size_t> bad;
  for (const char* k : {"wanda_scores", "top_set", "memorized_set", "aggregate_mask", "density", "pairwise_iou",
                        "tile_distance", "clique"})
    bad[k] = 0;
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t r = 1 + rng.uniform_index(8), c = 1 + rng.uniform_index(8);
    // wanda
    const auto W = rng.normal_matrix<float>(r, c);
    const auto H = rng.normal_matrix<float>(c, 1 + rng.uniform_index(6));
    const auto S = wanda_scores(W, H);
    const auto Sref = wanda(W, H);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        if (std::fabs(S(i, j) - Sref[i][j]) > 1e-5 * std::max(1.0, Sref[i][j])) {
          ++bad["wanda_scores"];
          i = r;
          break;
        }
    // top set, with and without ties
    const double pct = 1.0 + rng.uniform() * 98.0;
    const auto Sx = random_scores(rng, r, c, t % 2 == 0);
    const auto A = top_set(Sx, pct);
    if (to_set(A) != top(Sx, top_count(c, pct))) ++bad["top_set"];
    // memorized set
    const auto Sn = random_scores(rng, r, c, t % 2 == 0);
    if (to_set(memorized_set(Sx, Sn, A)) != memorized(Sx, Sn, to_set(A))) ++bad["memorized_set"];
    // aggregation
    std::vector<LayerSets> per_t(1 + rng.uniform_index(4));
    for (auto& sets : per_t)
      for (std::size_t l = 0; l < 3; ++l)
        if (rng.uniform() < 0.8) sets[l] = random_coords(rng, r, c, 0.3);
    const auto m = aggregate_mask(per_t, r, c);
    const auto ref = aggregate(per_t);
    std::map<std::size_t, std::set<Cell>> got;
    for (const auto& [l, s] : m.layers)
      if (!s.empty()) got[l] = to_set(s);
    if (got != ref) ++bad["aggregate_mask"];
    // density and IOU
    std::vector<CoordSet> sets;
    std::vector<std::set<Cell>> refs;
    const std::size_t nsets = 2 + rng.uniform_index(4);
    for (std::size_t k = 0; k < nsets; ++k) {
      sets.push_back(random_coords(rng, r, c, rng.uniform()));
      refs.push_back(to_set(sets.back()));
    }
    if (std::fabs(memsub::density(sets[0], r, c) - density(refs[0], r, c)) > 1e-12) ++bad["density"];
    if (std::fabs(pairwise_iou(sets) - mean_pairwise_iou(refs)) > 1e-12) ++bad["pairwise_iou"];
    // tile distance on images with side up to 8
    const std::size_t side = 1 + rng.uniform_index(8), tile = 1 + rng.uniform_index(side);
    std::vector<float> a(side * side), b(side * side);
    std::vector<double> ad(side * side), bd(side * side);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = float(rng.uniform_index(256)), b[i] = float(rng.uniform_index(256));
      ad[i] = a[i], bd[i] = b[i];
    }
    if (std::fabs(tile_distance(a, b, side, tile) - tile_dist(ad, bd, side, tile)) > 1e-9) ++bad["tile_distance"];
    // clique finder
    const std::size_t n = rng.uniform_index(13);
    const auto adj = random_graph(rng, n, rng.uniform());
    const auto g = graph_from_distances(distances_for(adj), 1.0);
    const std::size_t k = 2 + rng.uniform_index(5);
    const auto res = max_clique_at_least(g, k);
    const auto best = max_clique_size(adj);
    if (res.found != (best >= k) || res.clique.size() != best || !is_clique(adj, res.clique)) ++bad["clique"];
  }
  return bad;
}

}  // namespace memsub::oracle
