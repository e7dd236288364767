// tgate: command-line front end for the gated diffusion engine.
//
// Exit codes: 0 success, 2 usage/config error, 3 numeric failure,
// 4 invariant violation (analytic and instrumented MACs disagree), 1 I/O.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tgate/tgate.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitInvariant = 4;

// Flags shared by every command. Unset flags leave the config-file value alone.
struct CommonFlags {
  std::string config_path;
  std::vector<std::string> prompts;
  std::vector<std::uint64_t> seeds;
  std::string mode;
  std::string scheduler;
  int steps = 0;
  double cfg_scale = 0.0;
  bool no_cfg = false;
  int gate_step = 0;
  int sa_interval = 0;
  int warmup = 0;
  std::string anchor;
  bool no_collapse = false;
  bool no_ca_cache = false;
  bool no_sa_cache = false;
  bool cost_report = false;
  bool timing = false;
  std::string out;

  int latent_side = 0, channels = 0, patch = 0, width = 0, heads = 0, blocks = 0,
      mlp_ratio = 0, text_len = 0, text_dim = 0;
  std::uint64_t model_seed = 0;

  std::vector<std::string> ablate_modes;
  std::vector<int> m_values, k_values;
  std::vector<int> resolutions, token_factors;
};

struct Options {
  CLI::Option* prompts = nullptr;
  CLI::Option* seeds = nullptr;
  CLI::Option* mode = nullptr;
  CLI::Option* scheduler = nullptr;
  CLI::Option* steps = nullptr;
  CLI::Option* cfg_scale = nullptr;
  CLI::Option* gate_step = nullptr;
  CLI::Option* sa_interval = nullptr;
  CLI::Option* warmup = nullptr;
  CLI::Option* anchor = nullptr;
  CLI::Option* latent_side = nullptr;
  CLI::Option* channels = nullptr;
  CLI::Option* patch = nullptr;
  CLI::Option* width = nullptr;
  CLI::Option* heads = nullptr;
  CLI::Option* blocks = nullptr;
  CLI::Option* mlp_ratio = nullptr;
  CLI::Option* text_len = nullptr;
  CLI::Option* text_dim = nullptr;
  CLI::Option* model_seed = nullptr;
  CLI::Option* ablate_modes = nullptr;
  CLI::Option* m_values = nullptr;
  CLI::Option* k_values = nullptr;
  CLI::Option* resolutions = nullptr;
  CLI::Option* token_factors = nullptr;
};

Options add_common_flags(CLI::App& app, CommonFlags& f) {
  Options o;
  app.add_option("--config", f.config_path, "key=value config file; flags override it")
      ->check(CLI::ExistingFile);
  o.prompts = app.add_option("--prompt", f.prompts, "Prompt text (repeatable; \"\" is the null text)");
  o.seeds = app.add_option("--seed", f.seeds, "Initial-noise seed (repeatable)")->delimiter(',');
  o.mode = app.add_option("--mode", f.mode, "Trajectory: S, S_F, S_L, SA_F, SA_L, TGATE");
  o.scheduler = app.add_option("--scheduler", f.scheduler, "Sampler: ddim, dpm2m, euler");
  o.steps = app.add_option("--steps", f.steps, "Inference steps n");
  o.cfg_scale = app.add_option("--cfg-scale", f.cfg_scale, "Guidance scale w");
  app.add_flag("--no-cfg", f.no_cfg, "Disable classifier-free guidance (single branch)");
  o.gate_step = app.add_option("--gate-step", f.gate_step, "Gate step m (default 3n/5)");
  o.sa_interval = app.add_option("--sa-interval", f.sa_interval, "Self-attention interval k (default n/5)");
  o.warmup = app.add_option("--warmup", f.warmup, "Self-attention warm-up steps (default 2)");
  o.anchor = app.add_option("--anchor", f.anchor, "Cross-attention anchor: average, cond, uncond");
  app.add_flag("--no-collapse", f.no_collapse, "Keep both CFG branches after the gate step");
  app.add_flag("--no-ca-cache", f.no_ca_cache, "Disable cross-attention caching");
  app.add_flag("--no-sa-cache", f.no_sa_cache, "Disable self-attention interval caching");
  app.add_flag("--cost-report", f.cost_report, "Cross-check every run against the analytic MAC model");
  app.add_flag("--timing", f.timing, "Record wall-clock columns (makes outputs run-dependent)");
  app.add_option("--out", f.out, "Output directory (generate) or CSV file (other commands)");

  auto* model = app.add_option_group("model", "Toy denoiser architecture");
  o.latent_side = model->add_option("--latent-side", f.latent_side, "Latent tokens per side");
  o.channels = model->add_option("--channels", f.channels, "Latent channels");
  o.patch = model->add_option("--patch", f.patch, "Patch size");
  o.width = model->add_option("--width", f.width, "Model width D");
  o.heads = model->add_option("--heads", f.heads, "Attention heads");
  o.blocks = model->add_option("--blocks", f.blocks, "Transformer blocks L");
  o.mlp_ratio = model->add_option("--mlp-ratio", f.mlp_ratio, "MLP expansion");
  o.text_len = model->add_option("--text-len", f.text_len, "Prompt tokens");
  o.text_dim = model->add_option("--text-dim", f.text_dim, "Text embedding width");
  o.model_seed = model->add_option("--model-seed", f.model_seed, "Weight-initialization seed");

  auto* grid = app.add_option_group("grid", "Sweep grids (ablate, scale)");
  o.ablate_modes = grid->add_option("--modes", f.ablate_modes, "Ablation modes")->delimiter(',');
  o.m_values = grid->add_option("--m-values", f.m_values, "Ablation gate steps")->delimiter(',');
  o.k_values = grid->add_option("--k-values", f.k_values, "Ablation intervals")->delimiter(',');
  o.resolutions = grid->add_option("--resolutions", f.resolutions, "Latent sides for scale")->delimiter(',');
  o.token_factors = grid->add_option("--token-factors", f.token_factors, "Text-length multipliers for scale")
                        ->delimiter(',');
  return o;
}

tgate::RunConfig resolve_config(const CommonFlags& f, const Options& o) {
  tgate::RunConfig c;
  if (!f.config_path.empty()) c = tgate::load_run_config(f.config_path);
  auto set = [](CLI::Option* opt) { return opt && opt->count() > 0; };
  if (set(o.prompts)) c.prompts = f.prompts;
  if (set(o.seeds)) c.seeds = f.seeds;
  if (set(o.mode)) c.mode = tgate::parse_mode(f.mode);
  if (set(o.scheduler)) c.sampler = tgate::parse_sampler(f.scheduler);
  if (set(o.steps)) c.steps = f.steps;
  if (set(o.cfg_scale)) c.guidance.scale = f.cfg_scale;
  if (f.no_cfg) c.guidance.enabled = false;
  if (set(o.gate_step)) c.gate_step = f.gate_step;
  if (set(o.sa_interval)) c.sa_interval = f.sa_interval;
  if (set(o.warmup)) c.warmup = f.warmup;
  if (set(o.anchor)) c.anchor = tgate::parse_anchor(f.anchor);
  if (f.no_collapse) c.collapse_cfg = false;
  if (f.no_ca_cache) c.ca_cache = false;
  if (f.no_sa_cache) c.sa_cache = false;
  if (f.timing) c.timing = true;
  if (set(o.latent_side)) c.denoiser.latent_side = f.latent_side;
  if (set(o.channels)) c.denoiser.channels = f.channels;
  if (set(o.patch)) c.denoiser.patch = f.patch;
  if (set(o.width)) c.denoiser.width = f.width;
  if (set(o.heads)) c.denoiser.heads = f.heads;
  if (set(o.blocks)) c.denoiser.blocks = f.blocks;
  if (set(o.mlp_ratio)) c.denoiser.mlp_ratio = f.mlp_ratio;
  if (set(o.text_len)) c.denoiser.text_len = f.text_len;
  if (set(o.text_dim)) c.denoiser.text_dim = f.text_dim;
  if (set(o.model_seed)) c.denoiser.seed = f.model_seed;
  if (set(o.ablate_modes)) {
    c.ablate_modes.clear();
    for (const auto& m : f.ablate_modes) c.ablate_modes.push_back(tgate::parse_mode(m));
  }
  if (set(o.m_values)) c.ablate_m = f.m_values;
  if (set(o.k_values)) c.ablate_k = f.k_values;
  if (set(o.resolutions)) c.scale_resolutions = f.resolutions;
  if (set(o.token_factors)) c.scale_token_factors = f.token_factors;
  return c;
}

void emit(const std::string& out, const std::string& csv) {
  if (out.empty())
    std::cout << csv;
  else
    tgate::write_text_file(out, csv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal attention gating for a toy text-conditional diffusion transformer"};
  app.require_subcommand(1);
  app.fallthrough();
  CommonFlags flags;
  const Options opts = add_common_flags(app, flags);

  auto* generate = app.add_subcommand("generate", "Run one trajectory and write latent, log and cost files");
  std::string dump_weights;
  generate->add_option("--dump-weights", dump_weights, "Also dump denoiser weights into this directory");

  auto* ablate = app.add_subcommand("ablate", "Trajectory ablation grid vs. the baseline (CSV)");
  auto* converge = app.add_subcommand("converge", "Consecutive-step cross-attention difference curve (CSV)");
  bool per_block = false;
  std::string branch = "both";
  converge->add_flag("--per-block", per_block, "One curve per transformer block");
  converge->add_option("--branch", branch, "CFG branches to include: both, cond, uncond");

  auto* cost = app.add_subcommand("cost", "Per-step analytic vs. instrumented MACs (CSV)");
  std::string summary_path;
  cost->add_option("--summary", summary_path, "Also write the metric,value summary here");

  auto* scale = app.add_subcommand("scale", "Per-step MACs across resolutions and text lengths (CSV)");
  bool no_gating = false;
  scale->add_flag("--no-gating", no_gating, "Omit the gated column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const tgate::RunConfig config = resolve_config(flags, opts);
    if (generate->parsed()) {
      const std::filesystem::path out = flags.out.empty() ? "out" : flags.out;
      tgate::cmd_generate(config, out,
                          dump_weights.empty() ? std::nullopt
                                               : std::optional<std::filesystem::path>(dump_weights));
    } else if (ablate->parsed()) {
      emit(flags.out, tgate::cmd_ablate(config, tgate::threads_from_env(), flags.cost_report));
    } else if (converge->parsed()) {
      emit(flags.out, tgate::cmd_converge(config,
                                          per_block ? tgate::GroupBy::per_block : tgate::GroupBy::all,
                                          tgate::parse_branch_filter(branch)));
    } else if (cost->parsed()) {
      std::string summary;
      emit(flags.out, tgate::cmd_cost(config, &summary));
      if (!summary_path.empty()) tgate::write_text_file(summary_path, summary);
    } else if (scale->parsed()) {
      emit(flags.out, tgate::cmd_scale(config, !no_gating));
    }
  } catch (const tgate::ConfigError& e) {
    std::cerr << "tgate: " << e.what() << '\n' << "run 'tgate --help' for usage\n";
    return kExitUsage;
  } catch (const tgate::InvariantError& e) {
    std::cerr << "tgate: invariant violated: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const tgate::NumericError& e) {
    std::cerr << "tgate: numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const tgate::ShapeError& e) {
    std::cerr << "tgate: numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "tgate: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
