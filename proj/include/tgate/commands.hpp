#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "tgate/analysis.hpp"
#include "tgate/cost.hpp"
#include "tgate/pipeline.hpp"
#include "tgate/run_config.hpp"
#include "tgate/tensor_io.hpp"

namespace tgate {

// Batch commands behind the CLI. Each is a pure function of its RunConfig:
// outputs are byte-identical across runs unless timing is enabled.

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

// TGATE_THREADS caps sweep parallelism; unset or invalid means 1.
inline unsigned threads_from_env() {
  const char* v = std::getenv("TGATE_THREADS");
  if (!v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return (end && *end == '\0' && n > 0) ? static_cast<unsigned>(n) : 1u;
}

inline const std::string& require_prompt(const RunConfig& config) {
  if (config.prompts.empty()) throw ConfigError("missing prompt (pass --prompt)");
  return config.prompts.front();
}

struct GenerateResult {
  TrajectoryLog log;
  CostReport cost;
};

/// Runs the configured trajectory for the first prompt and seed. Writes
/// latent.{f32,json}, trajectory.csv, cost.csv, cost_summary.csv and the
/// resolved run.ini into out_dir.
inline GenerateResult cmd_generate(const RunConfig& config, const std::filesystem::path& out_dir,
                                   const std::optional<std::filesystem::path>& dump_weights = {}) {
  config.validate();
  const std::string& prompt = require_prompt(config);
  if (config.seeds.size() != 1) throw ConfigError("generate takes exactly one seed");

  const Denoiser denoiser(config.denoiser);
  const RunSettings settings = config.settings();
  const TrajectoryMode mode = config.trajectory_mode();
  GenerateResult result{run(mode, prompt, config.seeds.front(), denoiser, settings), {}};
  result.cost = trajectory_macs(schedule_for(mode, settings), config.denoiser,
                                settings.guidance.enabled);
  attach_instrumented(result.cost, result.log);

  std::filesystem::create_directories(out_dir);
  write_tensor(out_dir / "latent", result.log.final_latent);
  write_text_file(out_dir / "trajectory.csv", trajectory_csv(result.log));
  write_text_file(out_dir / "cost.csv", cost_csv(result.cost));
  write_text_file(out_dir / "cost_summary.csv",
                  cost_summary_csv(result.cost, config.denoiser, settings.guidance.enabled));
  write_text_file(out_dir / "run.ini", serialize_run_config(config));
  if (dump_weights) denoiser.dump_weights(*dump_weights);
  return result;
}

/// Ablation grid over the configured modes, gate steps and intervals, for the
/// first prompt and every seed. With check_cost, each cell is also re-run
/// against the analytic cost model.
inline std::string cmd_ablate(const RunConfig& config, unsigned threads = 1,
                              bool check_cost = false) {
  config.validate();
  const std::string& prompt = require_prompt(config);
  const Denoiser denoiser(config.denoiser);
  const RunSettings settings = config.settings();
  SweepGrid grid;
  grid.modes = config.ablate_modes;
  grid.m_values = config.ablate_m;
  grid.k_values = config.ablate_k;
  grid.warmup = config.warmup.value_or(2);
  grid.seeds = config.seeds;
  if (!grid.seeds.empty() && (grid.modes.empty() || grid.m_values.empty()))
    throw ConfigError("ablate needs at least one mode and one gate step");
  const auto rows = ablation_sweep(grid, prompt, denoiser, settings, threads);
  if (check_cost)
    for (const auto& r : rows) {
      const GateSchedule s = schedule_for(r.mode, settings);
      if (trajectory_macs(s, config.denoiser, settings.guidance.enabled).analytic_total.total() !=
          r.macs_total)
        throw InvariantError(std::string("analytic MACs disagree with the instrumented run for ") +
                             to_string(r.mode.tag));
    }
  return sweep_csv(rows);
}

/// Convergence curve of recorded cross-attention maps over baseline runs of
/// every prompt and seed.
inline std::string cmd_converge(const RunConfig& config, GroupBy group_by = GroupBy::all,
                                BranchFilter branches = BranchFilter::both) {
  config.validate();
  require_prompt(config);
  if (config.seeds.empty()) throw ConfigError("converge needs at least one seed");
  const Denoiser denoiser(config.denoiser);
  RunSettings settings = config.settings();
  settings.record_maps = true;
  std::vector<TrajectoryLog> runs;
  for (const auto& prompt : config.prompts)
    for (auto seed : config.seeds) runs.push_back(run({ModeTag::S}, prompt, seed, denoiser, settings));
  return convergence_csv(convergence_curve(runs, group_by, branches));
}

/// Per-step cost of the configured schedule, cross-checked against an
/// instrumented run. Returns the per-step CSV; the summary goes to *summary.
inline std::string cmd_cost(const RunConfig& config, std::string* summary = nullptr) {
  config.validate();
  const Denoiser denoiser(config.denoiser);
  const RunSettings settings = config.settings();
  const TrajectoryMode mode = config.trajectory_mode();
  const std::string prompt = config.prompts.empty() ? std::string() : config.prompts.front();
  const std::uint64_t seed = config.seeds.empty() ? 0 : config.seeds.front();
  CostReport report = trajectory_macs(schedule_for(mode, settings), config.denoiser,
                                      settings.guidance.enabled);
  attach_instrumented(report, run(mode, prompt, seed, denoiser, settings));
  if (summary) *summary = cost_summary_csv(report, config.denoiser, settings.guidance.enabled);
  return cost_csv(report);
}

inline std::string cmd_scale(const RunConfig& config, bool with_gating = true) {
  config.denoiser.validate();
  return scaling_csv(
      scaling_table(config.scale_resolutions, config.scale_token_factors, config.denoiser),
      with_gating);
}

}  // namespace tgate
