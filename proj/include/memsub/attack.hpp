#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memsub/dataset.hpp"
#include "memsub/diffusion.hpp"
#include "memsub/parallel.hpp"

namespace memsub {

/// Maximum over square tiles of the Euclidean distance between corresponding
/// tiles. Images are 1 × side² rows; the last tile in a row or column is
/// partial when side is not a multiple of tile.
inline double tile_distance(std::span<const float> a, std::span<const float> b, std::size_t side,
                            std::size_t tile) {
  if (a.size() != b.size() || a.size() != side * side) {
    throw ShapeError("tile_distance: image sizes " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " for side " + std::to_string(side));
  }
  if (tile == 0) throw ArgumentError("tile_distance: tile must be positive");
  double worst = 0.0;
  for (std::size_t ty = 0; ty < side; ty += tile) {
    for (std::size_t tx = 0; tx < side; tx += tile) {
      double s = 0.0;
      for (std::size_t y = ty; y < std::min(side, ty + tile); ++y)
        for (std::size_t x = tx; x < std::min(side, tx + tile); ++x) {
          const double d = double(a[y * side + x]) - double(b[y * side + x]);
          s += d * d;
        }
      worst = std::max(worst, std::sqrt(s));
    }
  }
  return worst;
}

inline double tile_distance(const Matrix& a, const Matrix& b, std::size_t side, std::size_t tile) {
  if (!a.same_shape(b)) throw ShapeError("tile_distance: " + shape_str(a) + " vs " + shape_str(b));
  return tile_distance(a.values(), b.values(), side, tile);
}

struct AttackConfig {
  std::size_t samples_per_prompt = 50;
  double distance_threshold = 50.0;  ///< modified L2 on [0,255] pixels
  std::size_t min_clique = 3;
  std::size_t tile = 4;
  bool calibrate_threshold = true;   ///< replace distance_threshold by the training-set midpoint rule

  void validate() const {
    if (min_clique < 2) throw ArgumentError("attack: min_clique must be >= 2");
    if (samples_per_prompt < min_clique) throw ArgumentError("attack: samples_per_prompt < min_clique");
    if (tile == 0) throw ArgumentError("attack: tile must be positive");
  }
};

inline void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = {{"samples_per_prompt", c.samples_per_prompt}, {"distance_threshold", c.distance_threshold},
       {"min_clique", c.min_clique},                 {"tile", c.tile},
       {"calibrate_threshold", c.calibrate_threshold}};
}
inline void from_json(const nlohmann::json& j, AttackConfig& c) {
  StrictObject(j, "attack")
      .opt("samples_per_prompt", c.samples_per_prompt)
      .opt("distance_threshold", c.distance_threshold)
      .opt("min_clique", c.min_clique)
      .opt("tile", c.tile)
      .opt("calibrate_threshold", c.calibrate_threshold)
      .finish();
}

/// Undirected graph over generated samples; edge when tile distance ≤ threshold.
struct SimilarityGraph {
  std::size_t nodes = 0;
  double threshold = 0.0;
  std::vector<std::vector<bool>> adj;
  std::vector<std::vector<double>> dist;

  bool edge(std::size_t a, std::size_t b) const { return adj[a][b]; }
  std::size_t edge_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < nodes; ++i)
      for (std::size_t j = i + 1; j < nodes; ++j) n += adj[i][j];
    return n;
  }
};

inline SimilarityGraph graph_from_distances(std::vector<std::vector<double>> dist, double threshold) {
  SimilarityGraph g;
  g.nodes = dist.size();
  g.threshold = threshold;
  g.adj.assign(g.nodes, std::vector<bool>(g.nodes, false));
  for (std::size_t i = 0; i < g.nodes; ++i)
    for (std::size_t j = 0; j < g.nodes; ++j) g.adj[i][j] = i != j && dist[i][j] <= threshold;
  g.dist = std::move(dist);
  return g;
}

/// samples: one image per row, [0,255] scale.
inline SimilarityGraph build_graph(const Matrix& samples, std::size_t side, std::size_t tile,
                                   double threshold) {
  if (samples.rows() == 0) throw ArgumentError("build_graph: no samples");
  const std::size_t n = samples.rows();
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dist[i][j] = dist[j][i] = tile_distance(samples.row(i), samples.row(j), side, tile);
  return graph_from_distances(std::move(dist), threshold);
}

struct CliqueResult {
  bool found = false;
  std::vector<std::size_t> clique;  ///< a maximum clique, sorted
};

namespace detail {

class MaxCliqueSearch {
 public:
  explicit MaxCliqueSearch(const SimilarityGraph& g) : g_(g) {}

  std::vector<std::size_t> run() {
    std::vector<std::size_t> r, p(g_.nodes), x;
    std::iota(p.begin(), p.end(), std::size_t{0});
    expand(r, p, x);
    std::sort(best_.begin(), best_.end());
    return best_;
  }

 private:
  // Bron–Kerbosch with Tomita pivoting, pruned when R ∪ P cannot beat the best.
  void expand(std::vector<std::size_t>& r, std::vector<std::size_t> p, std::vector<std::size_t> x) {
    if (p.empty()) {
      if (x.empty() && r.size() > best_.size()) best_ = r;
      return;
    }
    if (r.size() + p.size() <= best_.size()) return;

    std::size_t pivot = p.front(), pivot_deg = 0;
    for (const auto* set : {&p, &x}) {
      for (auto u : *set) {
        std::size_t deg = 0;
        for (auto v : p) deg += g_.edge(u, v);
        if (deg > pivot_deg || (deg == pivot_deg && u < pivot)) pivot = u, pivot_deg = deg;
      }
    }
    std::vector<std::size_t> candidates;
    for (auto v : p)
      if (!g_.edge(pivot, v)) candidates.push_back(v);

    for (auto v : candidates) {
      std::vector<std::size_t> np, nx;
      for (auto u : p)
        if (g_.edge(v, u)) np.push_back(u);
      for (auto u : x)
        if (g_.edge(v, u)) nx.push_back(u);
      r.push_back(v);
      expand(r, std::move(np), std::move(nx));
      r.pop_back();
      p.erase(std::find(p.begin(), p.end(), v));
      x.push_back(v);
      if (r.size() + p.size() <= best_.size()) return;
    }
  }

  const SimilarityGraph& g_;
  std::vector<std::size_t> best_;
};

}  // namespace detail

/// Exact search: found iff the graph has a clique of at least k nodes. The
/// witness is a maximum clique. A single node counts as a clique of size 1.
inline CliqueResult max_clique_at_least(const SimilarityGraph& g, std::size_t k) {
  if (k < 2) throw ArgumentError("max_clique_at_least: k must be >= 2");
  CliqueResult res;
  if (g.nodes == 0) return res;
  res.clique = detail::MaxCliqueSearch(g).run();
  res.found = res.clique.size() >= k;
  return res;
}

/// Clique member minimizing the summed distance to the other members.
inline std::size_t clique_medoid(const SimilarityGraph& g, const std::vector<std::size_t>& clique) {
  if (clique.empty()) throw ArgumentError("clique_medoid: empty clique");
  std::size_t best = clique.front();
  double best_sum = std::numeric_limits<double>::infinity();
  for (auto a : clique) {
    double s = 0.0;
    for (auto b : clique) s += g.dist[a][b];
    if (s < best_sum) best_sum = s, best = a;
  }
  return best;
}

/// Midpoint between the median distance among copies of the same duplicated
/// image and the median distance between images of different pattern classes.
inline double calibrate_threshold(const Dataset& ds, std::size_t tile, std::size_t per_class_cap = 20) {
  const auto side = ds.side();
  std::vector<double> intra, inter;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    if (!ds.items[i].duplicated) continue;
    // Copies are byte-identical, so every intra-duplicate pair sits at the
    // distance of the image to itself.
    const auto row = to_pixel_scale(image_to_row(ds.images[i]));
    for (std::size_t c = 1; c < ds.items[i].copies; ++c) intra.push_back(tile_distance(row, row, side, tile));
  }
  std::vector<std::pair<Matrix, int>> picks;
  std::vector<std::size_t> taken(ds.spec.num_classes, 0);
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const auto& it = ds.items[i];
    if (it.duplicated || taken[std::size_t(it.pattern_class)] >= per_class_cap) continue;
    ++taken[std::size_t(it.pattern_class)];
    picks.emplace_back(to_pixel_scale(image_to_row(ds.images[i])), it.pattern_class);
  }
  for (std::size_t i = 0; i < picks.size(); ++i)
    for (std::size_t j = i + 1; j < picks.size(); ++j)
      if (picks[i].second != picks[j].second)
        inter.push_back(tile_distance(picks[i].first, picks[j].first, side, tile));
  auto median = [](std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  if (inter.empty()) throw ArgumentError("calibrate_threshold: need at least two pattern classes");
  return 0.5 * (median(intra) + median(inter));
}

// ---------------------------------------------------------------------------

struct PromptVerdict {
  int label = 0;
  bool identified = false;
  bool actually_memorized = false;
  bool false_negative = false;  ///< some sample matches the training image but no clique was found
  std::size_t clique_size = 0;
  std::vector<std::size_t> clique;
  double representative_distance = -1.0;  ///< medoid → duplicated training image; -1 if no clique
  double nearest_training_distance = 0.0; ///< min over samples → duplicated training image
  double mean_pairwise_distance = 0.0;    ///< inter-seed spread
  std::size_t edges = 0;
};

struct MemorizationReport {
  double threshold = 0.0;
  AttackConfig config;
  std::vector<PromptVerdict> prompts;

  std::size_t identified_count() const {
    return std::size_t(std::count_if(prompts.begin(), prompts.end(), [](auto& p) { return p.identified; }));
  }
  std::size_t memorized_count() const {
    return std::size_t(
        std::count_if(prompts.begin(), prompts.end(), [](auto& p) { return p.actually_memorized; }));
  }
  double identified_pct() const { return prompts.empty() ? 0.0 : 100.0 * double(identified_count()) / double(prompts.size()); }
  double memorized_pct() const { return prompts.empty() ? 0.0 : 100.0 * double(memorized_count()) / double(prompts.size()); }
};

/// Produces one generated image per seed (rows, [-1,1]) for a prompt label.
using Generator = std::function<Matrix(int label, std::span<const std::uint64_t> seeds)>;

/// Seeds used for a prompt's attack samples.
inline std::vector<std::uint64_t> attack_seeds(std::uint64_t seed, int label, std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = derive_seed(seed, (std::uint64_t(label) << 32) | i);
  return s;
}

inline PromptVerdict attack_prompt(const Matrix& samples_unit, int label, const Matrix* training_unit,
                                   std::size_t side, const AttackConfig& cfg, double threshold) {
  const auto px = to_pixel_scale(samples_unit);
  const auto g = build_graph(px, side, cfg.tile, threshold);
  const auto cl = max_clique_at_least(g, cfg.min_clique);
  PromptVerdict v;
  v.label = label;
  v.identified = cl.found;
  v.clique_size = cl.clique.size();
  v.clique = cl.clique;
  v.edges = g.edge_count();
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < g.nodes; ++i)
    for (std::size_t j = i + 1; j < g.nodes; ++j) sum += g.dist[i][j], ++pairs;
  v.mean_pairwise_distance = pairs ? sum / double(pairs) : 0.0;
  if (training_unit) {
    const auto train_px = to_pixel_scale(*training_unit);
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < px.rows(); ++i)
      nearest = std::min(nearest, tile_distance(px.row(i), train_px.values(), side, cfg.tile));
    v.nearest_training_distance = nearest;
    if (cl.found) {
      const auto rep = clique_medoid(g, cl.clique);
      v.representative_distance = tile_distance(px.row(rep), train_px.values(), side, cfg.tile);
      v.actually_memorized = v.representative_distance <= threshold;
    } else {
      v.false_negative = nearest <= threshold;
    }
  }
  return v;
}

/// Extraction attack over a prompt pool. `training` maps each prompt to its
/// duplicated training image (nullptr when the prompt has none).
inline MemorizationReport run_attack(const Generator& generate, std::span<const int> prompts,
                                     const std::function<const Matrix*(int)>& training, std::size_t side,
                                     const AttackConfig& cfg, double threshold, std::uint64_t seed,
                                     std::size_t threads = 1) {
  cfg.validate();
  MemorizationReport rep;
  rep.threshold = threshold;
  rep.config = cfg;
  rep.prompts.resize(prompts.size());
  parallel_for(prompts.size(), threads, [&](std::size_t i) {
    const int label = prompts[i];
    const auto seeds = attack_seeds(seed, label, cfg.samples_per_prompt);
    const auto samples = generate(label, seeds);
    rep.prompts[i] = attack_prompt(samples, label, training(label), side, cfg, threshold);
  });
  return rep;
}

inline Generator model_generator(const DenoiserParams& params, const SamplerConfig& sampler,
                                 const NoiseSchedule& schedule) {
  return [&params, sampler, &schedule](int label, std::span<const std::uint64_t> seeds) {
    return sample_batch(params, label, seeds, sampler, schedule);
  };
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json report_to_json(const MemorizationReport& r) {
  nlohmann::json ps = nlohmann::json::array();
  for (const auto& p : r.prompts) {
    ps.push_back({{"label", p.label},
                  {"identified", p.identified},
                  {"actually_memorized", p.actually_memorized},
                  {"false_negative", p.false_negative},
                  {"clique_size", p.clique_size},
                  {"clique", p.clique},
                  {"representative_distance", p.representative_distance},
                  {"nearest_training_distance", p.nearest_training_distance},
                  {"mean_pairwise_distance", p.mean_pairwise_distance},
                  {"edges", p.edges}});
  }
  return {{"schema", "memsub.memorization/1"},
          {"threshold", r.threshold},
          {"config", r.config},
          {"identified_pct", r.identified_pct()},
          {"memorized_pct", r.memorized_pct()},
          {"prompts", ps}};
}

inline MemorizationReport report_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "memsub.memorization/1") throw FormatError("memorization report: bad schema");
  MemorizationReport r;
  r.threshold = j.at("threshold");
  r.config = j.at("config").get<AttackConfig>();
  for (const auto& e : j.at("prompts")) {
    PromptVerdict p;
    p.label = e.at("label");
    p.identified = e.at("identified");
    p.actually_memorized = e.at("actually_memorized");
    p.false_negative = e.at("false_negative");
    p.clique_size = e.at("clique_size");
    p.clique = e.at("clique").get<std::vector<std::size_t>>();
    p.representative_distance = e.at("representative_distance");
    p.nearest_training_distance = e.at("nearest_training_distance");
    p.mean_pairwise_distance = e.at("mean_pairwise_distance");
    p.edges = e.at("edges");
    r.prompts.push_back(std::move(p));
  }
  return r;
}

}  // namespace memsub
