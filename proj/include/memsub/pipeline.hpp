#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memsub/analysis.hpp"
#include "memsub/attack.hpp"
#include "memsub/config.hpp"
#include "memsub/localization.hpp"
#include "memsub/metrics.hpp"
#include "memsub/svg.hpp"
#include "memsub/training.hpp"

namespace memsub {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run directory layout

struct RunPaths {
  fs::path root;
  fs::path dataset;

  explicit RunPaths(const RunConfig& c) : root(c.out()), dataset(c.data_dir()) {}

  fs::path config() const { return root / "config.json"; }
  fs::path model_dir() const { return root / "model"; }
  fs::path checkpoint() const { return model_dir() / "checkpoint.bin"; }
  fs::path optimizer() const { return model_dir() / "optimizer.bin"; }
  fs::path loss_csv() const { return model_dir() / "loss.csv"; }
  fs::path snapshots() const { return model_dir() / "snapshots"; }
  fs::path localize_dir(const std::string& name) const { return root / "localize" / name; }
  fs::path pruned_dir() const { return root / "pruned"; }
  fs::path eval_dir() const { return root / "eval"; }
  fs::path attack_dir() const { return root / "attack"; }
  fs::path grid_dir() const { return root / "grids"; }
  fs::path report_dir() const { return root / "report"; }
};

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// Stores the exact configuration next to the run's outputs.
inline void write_run_config(const RunConfig& cfg) {
  write_text(RunPaths(cfg).config(), run_config_to_json(cfg).dump(2) + "\n");
}

inline std::string join_labels(std::span<const int> labels, char sep = ' ') {
  std::string s;
  for (std::size_t i = 0; i < labels.size(); ++i) s += (i ? std::string(1, sep) : "") + std::to_string(labels[i]);
  return s;
}

// ---------------------------------------------------------------------------
// dataset

inline Dataset cmd_dataset(const RunConfig& cfg, bool force, std::ostream& log = std::cout) {
  const RunPaths paths(cfg);
  if (fs::exists(paths.dataset) && !fs::is_empty(paths.dataset)) {
    if (!force) throw ArgumentError("dataset directory " + paths.dataset.string() + " is not empty (use --force)");
    fs::remove_all(paths.dataset);
  }
  auto ds = generate_dataset(cfg.dataset);
  save_dataset(paths.dataset, ds);
  write_run_config(cfg);
  log << "dataset: " << ds.items.size() << " images (" << ds.spec.num_duplicated << " duplicated x"
      << ds.spec.duplicate_copies << ") -> " << paths.dataset.string() << "\n";
  return ds;
}

inline Dataset require_dataset(const RunConfig& cfg) {
  const RunPaths paths(cfg);
  if (!fs::exists(paths.dataset / "manifest.json")) {
    throw Error("no dataset at " + paths.dataset.string() + " (run the dataset command first)");
  }
  auto ds = load_dataset(paths.dataset);
  if (ds.spec.image_size != cfg.model.image_size || ds.num_labels() != cfg.model.num_labels) {
    throw ArgumentError("dataset at " + paths.dataset.string() + " does not match the configured model");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// train

struct TrainSummary {
  std::size_t start_step = 0;
  std::size_t end_step = 0;
  double final_loss = 0.0;
};

namespace detail {

inline std::vector<std::string> read_lines(const fs::path& p) {
  std::vector<std::string> lines;
  std::ifstream f(p);
  for (std::string l; std::getline(f, l);) lines.push_back(l);
  return lines;
}

}  // namespace detail

/// Trains from scratch, or continues from the saved optimizer state when
/// `resume` is set. Snapshots (checkpoint, optimizer state, loss CSV, a small
/// sample grid) are written every log_every steps, so on divergence the last
/// good state is on disk.
inline TrainSummary cmd_train(const RunConfig& cfg, bool resume, std::ostream& log = std::cout) {
  const RunPaths paths(cfg);
  const auto ds = require_dataset(cfg);
  const auto data = expand_training_set(ds);
  const auto schedule = NoiseSchedule::linear(cfg.model.timesteps);
  fs::create_directories(paths.model_dir());

  DenoiserParams params;
  AdamState<float> adam;
  std::vector<std::string> loss_rows;
  if (resume && fs::exists(paths.checkpoint()) && fs::exists(paths.optimizer())) {
    auto ck = load_checkpoint(paths.checkpoint());
    if (!(ck.params.config == cfg.model)) throw ArgumentError("resume: checkpoint architecture differs from config");
    params = std::move(ck.params);
    adam = decode_adam_state(read_file(paths.optimizer()), params);
    auto lines = detail::read_lines(paths.loss_csv());
    if (lines.size() < adam.step + 1) throw FormatError("resume: loss CSV is shorter than the optimizer state");
    loss_rows.assign(lines.begin() + 1, lines.begin() + long(adam.step) + 1);
    log << "train: resuming at step " << adam.step << "\n";
  } else {
    params = init_params<float>(cfg.model, derive_seed(cfg.seed, seed_stream::init));
    adam = make_adam_state(params);
  }
  const std::size_t start = adam.step;

  auto flush = [&](const DenoiserParams& p) {
    save_checkpoint(paths.checkpoint(), p, cfg.seed);
    write_text(paths.optimizer(), encode_adam_state(adam));
    std::string csv = "iteration,loss,lr\n";
    for (const auto& r : loss_rows) csv += r + "\n";
    write_text(paths.loss_csv(), csv);
  };
  auto snapshot_grid = [&](const DenoiserParams& p, std::size_t it) {
    std::vector<Matrix> cells;
    SamplerConfig sc = cfg.sampler;
    for (int label = 1; label <= int(cfg.model.num_labels); ++label) {
      sc.seed = derive_seed(cfg.seed, 0x5A4D);
      cells.push_back(sample(p, label, sc, schedule));
    }
    char name[32];
    std::snprintf(name, sizeof name, "it_%06zu.pgm", it);
    fs::create_directories(paths.snapshots());
    write_pgm(paths.snapshots() / name, make_grid(cells, 1, cells.size(), cfg.model.image_size));
  };

  TrainSummary sum{start, start, 0.0};
  try {
    train(params, adam, data, cfg.train, schedule, [&](const StepInfo& st, const DenoiserParams& p) {
      loss_rows.push_back(std::to_string(st.iteration) + "," + fmt_num(st.loss) + "," + fmt_num(st.lr));
      sum.end_step = st.iteration;
      sum.final_loss = st.loss;
      if (st.log_point) {
        flush(p);
        snapshot_grid(p, st.iteration);
        log << "train: step " << st.iteration << " loss " << fmt_num(st.loss) << "\n";
      }
    });
  } catch (const DivergenceError& e) {
    log << "train: " << e.what() << "; last good checkpoint kept at " << paths.checkpoint().string() << "\n";
    throw;
  }
  if (sum.end_step == start) flush(params);
  return sum;
}

// ---------------------------------------------------------------------------
// Shared helpers for the model-consuming commands

struct Loaded {
  Dataset dataset;
  DenoiserParams params;
  NoiseSchedule schedule;
};

inline DenoiserParams load_model(const fs::path& checkpoint, const RunConfig& cfg) {
  if (!fs::exists(checkpoint)) throw Error("no checkpoint at " + checkpoint.string());
  auto ck = load_checkpoint(checkpoint);
  if (!(ck.params.config == cfg.model)) {
    throw MaskIntegrityError("checkpoint " + checkpoint.string() + " does not match the configured architecture");
  }
  return std::move(ck.params);
}

inline void check_labels(const Dataset& ds, std::span<const int> labels, const char* what) {
  for (int l : labels)
    if (l < 1 || std::size_t(l) > ds.num_labels()) {
      throw ArgumentError(std::string(what) + ": unknown prompt label " + std::to_string(l));
    }
}

/// Threshold used by the attack: the calibrated midpoint rule or the fixed value.
inline double attack_threshold(const RunConfig& cfg, const Dataset& ds) {
  return cfg.attack.calibrate_threshold ? calibrate_threshold(ds, cfg.attack.tile) : cfg.attack.distance_threshold;
}

// ---------------------------------------------------------------------------
// localize

struct LocalizeOutput {
  PromptCollection collection;
  std::vector<LocalizationResult> results;
  LocalizationStats stats;
  std::vector<std::string> notes;
};

inline std::string density_svg(const LocalizationStats& st, bool by_layer) {
  std::vector<svg::Series> series;
  for (std::size_t k = 0; k < st.density.size(); ++k) {
    const auto m = marginals(st.density[k]);
    svg::Series s{"subset " + std::to_string(k), {}, by_layer ? m.per_layer : m.per_timestep};
    if (by_layer)
      for (auto l : st.layers) s.x.push_back(double(l));
    else
      for (int t : st.timesteps) s.x.push_back(double(t));
    series.push_back(std::move(s));
  }
  return svg::line_chart(by_layer ? "Memorized-neuron density by layer (mean over timesteps)"
                                  : "Memorized-neuron density by timestep (mean over layers)",
                         by_layer ? "layer" : "timestep", "density (%)", series);
}

inline std::string iou_svg(const LocalizationStats& st, bool by_layer) {
  const auto m = marginals(st.iou);
  svg::Series s{"mean pairwise IOU", {}, by_layer ? m.per_layer : m.per_timestep};
  if (by_layer)
    for (auto l : st.layers) s.x.push_back(double(l));
  else
    for (int t : st.timesteps) s.x.push_back(double(t));
  return svg::line_chart(by_layer ? "IOU of memorized neurons by layer" : "IOU of memorized neurons by timestep",
                         by_layer ? "layer" : "timestep", "IOU", {s});
}

/// Localizes every subset and writes masks, long-format stats and figures to
/// <out>/localize/<name>/.
inline LocalizeOutput cmd_localize(const RunConfig& cfg, const fs::path& checkpoint, const PromptCollection& pc,
                                   const std::string& name, std::ostream& log = std::cout) {
  const RunPaths paths(cfg);
  const auto ds = require_dataset(cfg);
  if (pc.subsets.empty()) throw ArgumentError("localize: no prompt subsets");
  for (const auto& s : pc.subsets) {
    if (s.empty()) throw ArgumentError("localize: empty prompt subset");
    check_labels(ds, s, "localize");
  }
  const auto params = load_model(checkpoint, cfg);
  const auto schedule = NoiseSchedule::linear(cfg.model.timesteps);

  LocalizeOutput out;
  out.collection = pc;
  out.results.resize(pc.subsets.size());
  parallel_for(pc.subsets.size(), cfg.threads, [&](std::size_t k) {
    out.results[k] = localize(params, pc.subsets[k], cfg.localization, cfg.sampler, schedule);
  });
  out.stats = localization_stats(out.results);

  const auto dir = paths.localize_dir(name);
  fs::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t k = 0; k < out.results.size(); ++k) {
    char fname[32];
    std::snprintf(fname, sizeof fname, "mask_%02zu.json", k);
    save_mask(dir / fname, out.results[k].mask);
    index.push_back({{"file", fname}, {"prompts", pc.subsets[k]}, {"cardinality", out.results[k].mask.cardinality()}});
  }
  write_text(dir / "masks.json", index.dump(2) + "\n");
  std::ostringstream csv;
  write_stats_csv(csv, out.stats);
  write_text(dir / "stats.csv", csv.str());
  write_text(dir / "density_by_layer.svg", density_svg(out.stats, true));
  write_text(dir / "density_by_timestep.svg", density_svg(out.stats, false));
  if (out.stats.has_iou()) {
    write_text(dir / "iou_by_layer.svg", iou_svg(out.stats, true));
    write_text(dir / "iou_by_timestep.svg", iou_svg(out.stats, false));
  } else {
    out.notes.push_back("single subset: densities only, pairwise IOU needs at least two subsets");
  }
  for (const auto& n : out.notes) log << "localize: note: " << n << "\n";
  log << "localize: " << out.results.size() << " masks -> " << dir.string() << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// prune

struct PruneStats {
  std::size_t mask_cardinality = 0;
  std::size_t zeroed = 0;  ///< mask entries that were nonzero before pruning
  double ffn_sparsity_pct = 0.0;  ///< zeros over all w_out entries after pruning
};

inline PruneStats prune_stats(const DenoiserParams& before, const DenoiserParams& after, const NeuronMask& mask) {
  PruneStats st;
  st.mask_cardinality = mask.cardinality();
  for (const auto& [l, coords] : mask.layers)
    for (const auto& c : coords) st.zeroed += before.ffn_blocks[l].w_out(c.row, c.col) != 0.0f;
  std::size_t zeros = 0, total = 0;
  for (const auto& b : after.ffn_blocks) {
    zeros += b.w_out.size() - count_nonzero(b.w_out);
    total += b.w_out.size();
  }
  st.ffn_sparsity_pct = total ? 100.0 * double(zeros) / double(total) : 0.0;
  return st;
}

inline PruneStats cmd_prune(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& mask_path,
                            const fs::path& out_path, std::ostream& log = std::cout) {
  const auto params = load_model(checkpoint, cfg);
  const auto mask = load_mask(mask_path);
  const auto pruned = apply_mask(params, mask);
  const auto st = prune_stats(params, pruned, mask);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_checkpoint(out_path, pruned, cfg.seed);
  log << "prune: zeroed " << st.zeroed << " of " << st.mask_cardinality << " masked weights; w_out sparsity "
      << fmt_num(st.ffn_sparsity_pct) << "% -> " << out_path.string() << "\n";
  return st;
}

// ---------------------------------------------------------------------------
// attack

inline void write_memorization_csv(std::ostream& os, const MemorizationReport& r) {
  os << "label,identified,actually_memorized,false_negative,clique_size,edges,representative_distance,"
        "nearest_training_distance,mean_pairwise_distance\n";
  for (const auto& p : r.prompts) {
    os << p.label << ',' << int(p.identified) << ',' << int(p.actually_memorized) << ',' << int(p.false_negative)
       << ',' << p.clique_size << ',' << p.edges << ',' << fmt_num(p.representative_distance) << ','
       << fmt_num(p.nearest_training_distance) << ',' << fmt_num(p.mean_pairwise_distance) << '\n';
  }
}

inline MemorizationReport attack_model(const RunConfig& cfg, const Dataset& ds, const DenoiserParams& params,
                                       std::span<const int> prompts) {
  check_labels(ds, prompts, "attack");
  const auto schedule = NoiseSchedule::linear(cfg.model.timesteps);
  std::map<int, Matrix> train_img;
  for (int l : prompts) {
    const int idx = ds.duplicated_index(l);
    if (idx >= 0) train_img.emplace(l, image_to_row(ds.images[std::size_t(idx)]));
  }
  auto training = [&](int l) -> const Matrix* {
    const auto it = train_img.find(l);
    return it == train_img.end() ? nullptr : &it->second;
  };
  return run_attack(model_generator(params, cfg.sampler, schedule), prompts, training, ds.side(), cfg.attack,
                    attack_threshold(cfg, ds), derive_seed(cfg.seed, seed_stream::attack), cfg.threads);
}

inline MemorizationReport cmd_attack(const RunConfig& cfg, const fs::path& checkpoint, std::span<const int> prompts,
                                     const std::string& name, std::ostream& log = std::cout) {
  const auto ds = require_dataset(cfg);
  const auto params = load_model(checkpoint, cfg);
  const auto rep = attack_model(cfg, ds, params, prompts);
  const auto dir = RunPaths(cfg).attack_dir();
  write_text(dir / (name + ".json"), report_to_json(rep).dump(2) + "\n");
  std::ostringstream csv;
  write_memorization_csv(csv, rep);
  write_text(dir / (name + ".csv"), csv.str());
  log << "attack: " << rep.identified_count() << " of " << rep.prompts.size() << " prompts identified, "
      << rep.memorized_count() << " actually memorized (threshold " << fmt_num(rep.threshold) << ")\n";
  return rep;
}

// ---------------------------------------------------------------------------
// evaluate

/// Frozen evaluation fixtures derived from the dataset alone.
struct EvalFixtures {
  Classifier classifier;
  FeatureBasis basis;
  Matrix reference;
  double classifier_train_accuracy = 0.0;
};

inline EvalFixtures make_eval_fixtures(const RunConfig& cfg, const Dataset& ds) {
  EvalFixtures fx;
  const auto clean = clean_training_examples(ds);
  fx.classifier = make_classifier(train_softmax(clean));
  fx.classifier_train_accuracy = classifier_accuracy(fx.classifier, clean);
  Matrix train_imgs(clean.size(), ds.side() * ds.side());
  for (std::size_t i = 0; i < clean.size(); ++i)
    std::copy(clean[i].first.values().begin(), clean[i].first.values().end(), train_imgs.row(i).begin());
  fx.basis = fit_pca(train_imgs, cfg.evaluation.pca_components);
  const auto held = held_out_images(ds.spec, cfg.evaluation.heldout_per_class);
  fx.reference = Matrix(held.size(), ds.side() * ds.side());
  for (std::size_t i = 0; i < held.size(); ++i)
    std::copy(held[i].first.values().begin(), held[i].first.values().end(), fx.reference.row(i).begin());
  return fx;
}

inline QualityReport quality_of(const RunConfig& cfg, const Dataset& ds, const EvalFixtures& fx,
                                const DenoiserParams& params, std::span<const int> labels) {
  const auto schedule = NoiseSchedule::linear(cfg.model.timesteps);
  std::vector<std::pair<int, Matrix>> samples(labels.size());
  parallel_for(labels.size(), cfg.threads, [&](std::size_t i) {
    std::vector<std::uint64_t> seeds(cfg.evaluation.quality_samples);
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      seeds[k] = derive_seed(derive_seed(cfg.seed, seed_stream::quality), (std::uint64_t(labels[i]) << 32) | k);
    }
    samples[i] = {labels[i], sample_batch(params, labels[i], seeds, cfg.sampler, schedule)};
  });
  QualityContext ctx{&ds, &fx.classifier, &fx.basis, &fx.reference, cfg.attack.tile};
  return evaluate_quality(samples, ctx);
}

struct ModelEvaluation {
  std::string name;
  std::vector<int> mask_prompts;  ///< empty for the unpruned model
  std::vector<int> test_pool;
  QualityReport quality;
  MemorizationReport memorization;
};

struct PrunedModel {
  std::string name;
  fs::path checkpoint;
  std::vector<int> mask_prompts;
};

struct EvaluationResult {
  ModelEvaluation base;
  std::vector<ModelEvaluation> pruned;
  double classifier_train_accuracy = 0.0;
};

/// Memorized prompts a pruned model may be tested on: the pool minus the
/// prompts its mask was built from. An explicit pool that overlaps the mask
/// prompts is a protocol violation.
inline std::vector<int> holdout_pool(std::span<const int> pool, std::span<const int> mask_prompts, bool explicit_pool) {
  std::vector<int> out;
  for (int p : pool) {
    const bool used = std::find(mask_prompts.begin(), mask_prompts.end(), p) != mask_prompts.end();
    if (used && explicit_pool) {
      throw ProtocolError("evaluate: prompt " + std::to_string(p) +
                          " was used to build the mask and cannot be in the test pool");
    }
    if (!used) out.push_back(p);
  }
  return out;
}

inline void write_evaluation_outputs(const RunConfig& cfg, const EvaluationResult& r) {
  const auto dir = RunPaths(cfg).eval_dir();
  fs::create_directories(dir);
  std::vector<const ModelEvaluation*> all{&r.base};
  for (const auto& p : r.pruned) all.push_back(&p);

  std::ostringstream summary, mem;
  summary << "model,mask_prompts,test_pool,identified,actually_memorized,tested,frechet,mean_alignment_clean,"
             "mean_similarity_memorized\n";
  mem << "model,label,identified,actually_memorized,clique_size,mean_pairwise_distance,nearest_training_distance\n";
  nlohmann::json j = nlohmann::json::array();
  for (const auto* m : all) {
    double sim = 0.0;
    std::size_t n = 0;
    for (const auto& q : m->quality.prompts)
      if (q.duplicated) sim += q.mean_similarity, ++n;
    summary << m->name << ',' << join_labels(m->mask_prompts) << ',' << join_labels(m->test_pool) << ','
            << m->memorization.identified_count() << ',' << m->memorization.memorized_count() << ','
            << m->memorization.prompts.size() << ',' << fmt_num(m->quality.frechet) << ','
            << fmt_num(m->quality.mean_alignment(false)) << ',' << fmt_num(n ? sim / double(n) : 0.0) << '\n';
    for (const auto& p : m->memorization.prompts)
      mem << m->name << ',' << p.label << ',' << int(p.identified) << ',' << int(p.actually_memorized) << ','
          << p.clique_size << ',' << fmt_num(p.mean_pairwise_distance) << ','
          << fmt_num(p.nearest_training_distance) << '\n';
    std::ostringstream qcsv;
    write_quality_csv(qcsv, m->quality);
    write_text(dir / ("quality_" + m->name + ".csv"), qcsv.str());
    j.push_back({{"name", m->name},
                 {"mask_prompts", m->mask_prompts},
                 {"test_pool", m->test_pool},
                 {"quality", quality_to_json(m->quality)},
                 {"memorization", report_to_json(m->memorization)}});
  }
  write_text(dir / "summary.csv", summary.str());
  write_text(dir / "memorization.csv", mem.str());
  write_text(dir / "evaluation.json",
             nlohmann::json{{"schema", "memsub.evaluation/1"},
                            {"classifier_train_accuracy", r.classifier_train_accuracy},
                            {"models", j}}
                     .dump(2) +
                 "\n");

  // Table 1 analog: identified / actually memorized rates before and after.
  std::vector<svg::Bar> bars;
  for (const auto* m : all) {
    bars.push_back({m->name,
                    {{"identified (%)", m->memorization.identified_pct()},
                     {"actually memorized (%)", m->memorization.memorized_pct()}}});
  }
  write_text(dir / "memorization_rates.svg", svg::bar_chart("Attack results before and after pruning", "% of tested prompts", bars));
  // Fig. 3 analog: similarity to training vs alignment, one point per model.
  std::vector<svg::Series> pts;
  for (const auto* m : all) {
    double sim = 0.0;
    std::size_t n = 0;
    for (const auto& q : m->quality.prompts)
      if (q.duplicated) sim += q.mean_similarity, ++n;
    const double s = n ? sim / double(n) : 0.0, a = m->quality.mean_alignment(false);
    pts.push_back({m->name, {s, s}, {a, a}});
  }
  write_text(dir / "similarity_vs_alignment.svg",
             svg::line_chart("Similarity to training image vs alignment", "similarity proxy (memorized prompts)",
                             "alignment proxy (clean prompts)", pts));
}

/// Evaluates the unpruned model on the whole pool and each pruned model on
/// its held-out part of the pool. Quality is always measured on the class
/// (non-memorized) prompts plus the tested memorized prompts.
inline EvaluationResult cmd_evaluate(const RunConfig& cfg, const fs::path& base_checkpoint,
                                     const std::vector<PrunedModel>& pruned, std::span<const int> pool,
                                     bool explicit_pool, std::ostream& log = std::cout) {
  const auto ds = require_dataset(cfg);
  check_labels(ds, pool, "evaluate");
  // Validate the protocol before any expensive work.
  std::vector<std::vector<int>> pools;
  for (const auto& p : pruned) pools.push_back(holdout_pool(pool, p.mask_prompts, explicit_pool));

  const auto fx = make_eval_fixtures(cfg, ds);
  const auto classes = ds.class_labels();
  auto evaluate_one = [&](const std::string& name, const DenoiserParams& params, std::vector<int> mask_prompts,
                          std::vector<int> test_pool) {
    ModelEvaluation ev;
    ev.name = name;
    ev.mask_prompts = std::move(mask_prompts);
    ev.test_pool = std::move(test_pool);
    std::vector<int> qlabels = classes;
    qlabels.insert(qlabels.end(), ev.test_pool.begin(), ev.test_pool.end());
    ev.quality = quality_of(cfg, ds, fx, params, qlabels);
    ev.memorization = attack_model(cfg, ds, params, ev.test_pool);
    log << "evaluate: " << name << ": " << ev.memorization.identified_count() << "/" << ev.test_pool.size()
        << " identified, frechet " << fmt_num(ev.quality.frechet) << ", alignment "
        << fmt_num(ev.quality.mean_alignment(false)) << "\n";
    return ev;
  };

  EvaluationResult res;
  res.classifier_train_accuracy = fx.classifier_train_accuracy;
  res.base = evaluate_one("base", load_model(base_checkpoint, cfg), {}, {pool.begin(), pool.end()});
  for (std::size_t k = 0; k < pruned.size(); ++k) {
    res.pruned.push_back(evaluate_one(pruned[k].name, load_model(pruned[k].checkpoint, cfg), pruned[k].mask_prompts, pools[k]));
  }
  write_evaluation_outputs(cfg, res);
  return res;
}

// ---------------------------------------------------------------------------
// sample-grid

/// One PGM per label: rows are models, columns are seeds.
inline std::vector<fs::path> cmd_sample_grid(const RunConfig& cfg, const std::vector<fs::path>& checkpoints,
                                             std::span<const int> labels, std::span<const std::uint64_t> seeds,
                                             const fs::path& out_dir, std::ostream& log = std::cout) {
  if (checkpoints.empty()) throw ArgumentError("sample-grid: need at least one checkpoint");
  if (seeds.empty()) throw ArgumentError("sample-grid: need at least one seed");
  const auto schedule = NoiseSchedule::linear(cfg.model.timesteps);
  std::vector<DenoiserParams> models;
  for (const auto& c : checkpoints) models.push_back(load_model(c, cfg));
  for (int l : labels)
    if (l < 0 || std::size_t(l) > cfg.model.num_labels) throw ArgumentError("sample-grid: unknown label " + std::to_string(l));
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (int l : labels) {
    std::vector<Matrix> cells(models.size() * seeds.size());
    parallel_for(models.size(), cfg.threads, [&](std::size_t m) {
      const auto rows = sample_batch(models[m], l, seeds, cfg.sampler, schedule);
      for (std::size_t s = 0; s < seeds.size(); ++s) cells[m * seeds.size() + s] = slice_rows(rows, s, s + 1);
    });
    char name[40];
    std::snprintf(name, sizeof name, "label_%02d.pgm", l);
    write_pgm(out_dir / name, make_grid(cells, models.size(), seeds.size(), cfg.model.image_size));
    written.push_back(out_dir / name);
  }
  log << "sample-grid: " << written.size() << " grids -> " << out_dir.string() << "\n";
  return written;
}

// ---------------------------------------------------------------------------
// report

/// Collects whatever the run directory holds into report/summary.md.
inline fs::path cmd_report(const RunConfig& cfg, std::ostream& log = std::cout) {
  const RunPaths paths(cfg);
  std::ostringstream md;
  md << "# Run report\n\nRun directory: `" << paths.root.string() << "`\n\n";
  if (fs::exists(paths.loss_csv())) {
    const auto lines = detail::read_lines(paths.loss_csv());
    if (lines.size() > 1) md << "Training: " << lines.size() - 1 << " steps, last row `" << lines.back() << "`\n\n";
  }
  for (const char* name : {"memorized", "control"}) {
    const auto csv = paths.localize_dir(name) / "stats.csv";
    if (!fs::exists(csv)) continue;
    const auto idx = nlohmann::json::parse(read_file(paths.localize_dir(name) / "masks.json"));
    md << "## Localization (" << name << ")\n\n| mask | prompts | size |\n|---|---|---|\n";
    for (const auto& m : idx)
      md << "| " << m.at("file").get<std::string>() << " | " << join_labels(m.at("prompts").get<std::vector<int>>())
         << " | " << m.at("cardinality").get<std::size_t>() << " |\n";
    md << "\n";
  }
  const auto eval = paths.eval_dir() / "evaluation.json";
  if (fs::exists(eval)) {
    const auto j = nlohmann::json::parse(read_file(eval));
    md << "## Evaluation\n\n| model | tested | identified | actually memorized | frechet | alignment |\n"
          "|---|---|---|---|---|---|\n";
    for (const auto& m : j.at("models")) {
      const auto q = quality_from_json(m.at("quality"));
      const auto r = report_from_json(m.at("memorization"));
      md << "| " << m.at("name").get<std::string>() << " | " << r.prompts.size() << " | " << r.identified_count()
         << " | " << r.memorized_count() << " | " << fmt_num(q.frechet) << " | " << fmt_num(q.mean_alignment(false))
         << " |\n";
    }
    md << "\n";
  }
  if (fs::exists(paths.attack_dir())) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(paths.attack_dir()))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (!files.empty()) md << "## Attacks\n\n";
    for (const auto& f : files) {
      const auto r = report_from_json(nlohmann::json::parse(read_file(f)));
      md << "- " << f.stem().string() << ": " << r.identified_count() << "/" << r.prompts.size()
         << " identified, " << r.memorized_count() << " actually memorized\n";
    }
  }
  const auto out = paths.report_dir() / "summary.md";
  write_text(out, md.str());
  log << "report: " << out.string() << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Full pipeline

/// Memorized-prompt collection (every prompt held out by some subset) and a
/// control collection drawn from the class prompts, both from the run seed.
struct Collections {
  PromptCollection memorized;
  PromptCollection control;
};

inline Collections draw_collections(const RunConfig& cfg, const Dataset& ds) {
  Rng rng(derive_seed(cfg.seed, seed_stream::collection));
  const auto pool = ds.duplicated_labels();
  const auto classes = ds.class_labels();
  Collections c;
  c.memorized = sample_collection(pool, cfg.analysis.num_subsets, cfg.analysis.subset_size, rng, true);
  c.control = sample_collection(classes, cfg.analysis.num_subsets, std::min(cfg.analysis.subset_size, classes.size()), rng);
  return c;
}

inline fs::path mask_file(const RunConfig& cfg, const std::string& name, std::size_t k) {
  char f[32];
  std::snprintf(f, sizeof f, "mask_%02zu.json", k);
  return RunPaths(cfg).localize_dir(name) / f;
}

inline fs::path pruned_file(const RunConfig& cfg, std::size_t k) {
  char f[32];
  std::snprintf(f, sizeof f, "pruned_%02zu.bin", k);
  return RunPaths(cfg).pruned_dir() / f;
}

struct PipelineResult {
  Dataset dataset;
  TrainSummary train;
  Collections collections;
  LocalizeOutput memorized;
  LocalizeOutput control;
  std::vector<PruneStats> prune;
  EvaluationResult evaluation;
};

/// Everything after training: localize (memorized and control) -> prune each
/// memorized mask -> held-out evaluation -> sample grids -> report.
inline PipelineResult run_from_checkpoint(const RunConfig& cfg, std::ostream& log = std::cout) {
  PipelineResult r;
  const RunPaths paths(cfg);
  r.dataset = require_dataset(cfg);
  r.collections = draw_collections(cfg, r.dataset);
  r.memorized = cmd_localize(cfg, paths.checkpoint(), r.collections.memorized, "memorized", log);
  r.control = cmd_localize(cfg, paths.checkpoint(), r.collections.control, "control", log);

  std::vector<PrunedModel> pruned;
  for (std::size_t k = 0; k < r.collections.memorized.count(); ++k) {
    r.prune.push_back(cmd_prune(cfg, paths.checkpoint(), mask_file(cfg, "memorized", k), pruned_file(cfg, k), log));
    char name[32];
    std::snprintf(name, sizeof name, "pruned_%02zu", k);
    pruned.push_back({name, pruned_file(cfg, k), r.collections.memorized.subsets[k]});
  }
  const auto pool = r.dataset.duplicated_labels();
  r.evaluation = cmd_evaluate(cfg, paths.checkpoint(), pruned, pool, false, log);

  std::vector<fs::path> models{paths.checkpoint()};
  for (const auto& p : pruned) models.push_back(p.checkpoint);
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  cmd_sample_grid(cfg, models, pool, seeds, paths.grid_dir(), log);
  cmd_report(cfg, log);
  return r;
}

/// dataset -> train -> run_from_checkpoint.
inline PipelineResult run_pipeline(const RunConfig& cfg, std::ostream& log = std::cout) {
  cmd_dataset(cfg, true, log);
  const auto train = cmd_train(cfg, false, log);
  auto r = run_from_checkpoint(cfg, log);
  r.train = train;
  return r;
}

}  // namespace memsub
