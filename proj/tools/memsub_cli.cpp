#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "memsub/pipeline.hpp"

namespace {

using namespace memsub;

std::vector<int> parse_labels(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ArgumentError("not a label list: '" + text + "'");
    }
  }
  return out;
}

/// "11,12,13;14,15,16" -> one subset per ';'-separated group.
PromptCollection parse_subsets(const std::string& text) {
  PromptCollection pc;
  std::stringstream ss(text);
  std::string group;
  while (std::getline(ss, group, ';')) pc.subsets.push_back(parse_labels(group));
  pc.subset_size = pc.subsets.empty() ? 0 : pc.subsets.front().size();
  return pc;
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  bool force = false;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? default_run_config() : load_run_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.out) cfg.output_dir = *g.out;
  if (g.threads) cfg.threads = *g.threads;
  validate_run_config(cfg);
  resolve_seeds(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Localize and prune memorization neurons in a toy conditional diffusion model"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global seed (overrides the config)");
  app.add_option("--out", g.out, "Run directory (overrides the config)");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Overwrite existing outputs");

  auto* dataset = app.add_subcommand("dataset", "Generate the synthetic dataset");

  bool resume = false;
  auto* train = app.add_subcommand("train", "Train the denoiser");
  train->add_flag("--resume", resume, "Continue from the run's checkpoint");

  std::string checkpoint, subsets, name = "memorized", mask, output, labels, seeds = "1,2,3,4", prompts;
  std::vector<std::string> checkpoints, pruned_specs;

  auto* localize = app.add_subcommand("localize", "Find memorized neurons for prompt subsets");
  localize->add_option("--checkpoint", checkpoint, "Model checkpoint (default: the run's)");
  localize->add_option("--subsets", subsets, "Prompt subsets, e.g. 11,12;13,14 (default: drawn from the seed)");
  localize->add_option("--name", name, "Output name under localize/");

  auto* prune = app.add_subcommand("prune", "Zero the masked weights of a checkpoint");
  prune->add_option("--checkpoint", checkpoint, "Model checkpoint (default: the run's)");
  prune->add_option("--mask", mask, "Mask file")->required();
  prune->add_option("--output", output, "Pruned checkpoint path")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Quality and memorization before and after pruning");
  evaluate->add_option("--checkpoint", checkpoint, "Unpruned checkpoint (default: the run's)");
  evaluate->add_option("--pruned", pruned_specs, "PATH:LABELS for a pruned model and its mask prompts");
  evaluate->add_option("--pool", prompts, "Memorized prompt pool (default: all duplicated prompts)");

  auto* grid = app.add_subcommand("sample-grid", "Sample grids, rows = models, cols = seeds");
  grid->add_option("--checkpoint", checkpoints, "Checkpoints, one grid row each")->required();
  grid->add_option("--labels", labels, "Prompt labels (default: duplicated prompts)");
  grid->add_option("--seeds", seeds, "Sampling seeds");
  grid->add_option("--output", output, "Output directory (default: the run's grids/)");

  auto* attack = app.add_subcommand("attack", "Extraction attack on a checkpoint");
  attack->add_option("--checkpoint", checkpoint, "Model checkpoint (default: the run's)");
  attack->add_option("--prompts", prompts, "Prompt labels (default: duplicated prompts)");
  attack->add_option("--name", name, "Report name under attack/")->default_val("base");

  auto* report = app.add_subcommand("report", "Summarize the run directory");
  auto* run = app.add_subcommand("run", "Whole pipeline from dataset to report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const auto cfg = resolve_config(g);
    const RunPaths paths(cfg);
    const fs::path ckpt = checkpoint.empty() ? paths.checkpoint() : fs::path(checkpoint);
    auto dup_labels = [&] { return require_dataset(cfg).duplicated_labels(); };

    if (*dataset) {
      cmd_dataset(cfg, g.force);
    } else if (*train) {
      if (!resume && fs::exists(paths.checkpoint()) && !g.force) {
        throw ArgumentError("checkpoint " + paths.checkpoint().string() + " exists (use --resume or --force)");
      }
      write_run_config(cfg);
      cmd_train(cfg, resume);
    } else if (*localize) {
      write_run_config(cfg);
      PromptCollection pc;
      if (!subsets.empty()) {
        pc = parse_subsets(subsets);
      } else {
        const auto c = draw_collections(cfg, require_dataset(cfg));
        pc = name == "control" ? c.control : c.memorized;
      }
      cmd_localize(cfg, ckpt, pc, name);
    } else if (*prune) {
      if (fs::exists(output) && !g.force) throw ArgumentError(output + " exists (use --force)");
      cmd_prune(cfg, ckpt, mask, output);
    } else if (*evaluate) {
      write_run_config(cfg);
      std::vector<PrunedModel> pruned;
      for (const auto& spec : pruned_specs) {
        const auto colon = spec.rfind(':');
        if (colon == std::string::npos) throw ArgumentError("--pruned expects PATH:LABELS, got '" + spec + "'");
        const fs::path p = spec.substr(0, colon);
        pruned.push_back({p.stem().string(), p, parse_labels(spec.substr(colon + 1))});
      }
      if (pruned_specs.empty()) {
        // Default to the pipeline layout: every memorized mask pruned under pruned/.
        const auto idx = nlohmann::json::parse(read_file(paths.localize_dir("memorized") / "masks.json"));
        for (std::size_t k = 0; k < idx.size(); ++k) {
          const auto p = pruned_file(cfg, k);
          if (!fs::exists(p)) cmd_prune(cfg, ckpt, mask_file(cfg, "memorized", k), p);
          pruned.push_back({p.stem().string(), p, idx[k].at("prompts").get<std::vector<int>>()});
        }
      }
      const bool explicit_pool = !prompts.empty();
      const auto pool = explicit_pool ? parse_labels(prompts) : dup_labels();
      cmd_evaluate(cfg, ckpt, pruned, pool, explicit_pool);
    } else if (*grid) {
      std::vector<fs::path> models(checkpoints.begin(), checkpoints.end());
      const auto ls = labels.empty() ? dup_labels() : parse_labels(labels);
      std::vector<std::uint64_t> sd;
      for (int s : parse_labels(seeds)) sd.push_back(std::uint64_t(s));
      cmd_sample_grid(cfg, models, ls, sd, output.empty() ? paths.grid_dir() : fs::path(output));
    } else if (*attack) {
      const auto ps = prompts.empty() ? dup_labels() : parse_labels(prompts);
      cmd_attack(cfg, ckpt, ps, name);
    } else if (*report) {
      cmd_report(cfg);
    } else if (*run) {
      if (fs::exists(paths.root) && !fs::is_empty(paths.root) && !g.force) {
        throw ArgumentError("run directory " + paths.root.string() + " is not empty (use --force)");
      }
      run_pipeline(cfg);
    }
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
