#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tgate/denoiser.hpp"
#include "tgate/gating.hpp"
#include "tgate/pipeline.hpp"

namespace tgate {

// MACs count matmul multiply-accumulates only; softmax, normalization, GELU and
// elementwise work are free. The labels match the ones the denoiser reports to
// its MacCounter.
struct MacBreakdown {
  std::uint64_t sa = 0;
  std::uint64_t ca = 0;
  std::uint64_t mlp = 0;
  std::uint64_t proj = 0;

  std::uint64_t total() const { return sa + ca + mlp + proj; }

  static MacBreakdown from(const MacCounter& c) {
    return {c.of("sa"), c.of("ca"), c.of("mlp"), c.of("proj")};
  }

  MacBreakdown& operator+=(const MacBreakdown& o) {
    sa += o.sa;
    ca += o.ca;
    mlp += o.mlp;
    proj += o.proj;
    return *this;
  }
  bool operator==(const MacBreakdown&) const = default;
};

struct StepFlags {
  bool ca_active = true;
  bool sa_active = true;
  int branches = 2;
};

/// Per-step MACs of the toy denoiser, by label.
///
/// With s latent tokens, s_c text tokens of width T, model width D, MLP width F,
/// patch vector length P and L blocks, one branch costs
///   proj = 2·s·P·D
///   sa   = L·(4·s·D² + 2·s²·D)
///   ca   = L·(2·s·D² + 2·s_c·T·D + 2·s·s_c·D)
///   mlp  = L·(2·s·D·F)
/// and every term scales with the branch count.
inline MacBreakdown analytic_step_breakdown(const DenoiserConfig& config, const StepFlags& flags) {
  config.validate();
  const auto s = static_cast<std::uint64_t>(config.tokens());
  const auto sc = static_cast<std::uint64_t>(config.text_len);
  const auto t = static_cast<std::uint64_t>(config.text_dim);
  const auto d = static_cast<std::uint64_t>(config.width);
  const auto f = static_cast<std::uint64_t>(config.mlp_hidden());
  const auto p = static_cast<std::uint64_t>(config.patch_dim());
  const auto l = static_cast<std::uint64_t>(config.blocks);
  const auto b = static_cast<std::uint64_t>(flags.branches);

  MacBreakdown m;
  m.proj = b * 2 * s * p * d;
  if (flags.sa_active) m.sa = b * l * (4 * s * d * d + 2 * s * s * d);
  if (flags.ca_active) m.ca = b * l * (2 * s * d * d + 2 * sc * t * d + 2 * s * sc * d);
  m.mlp = b * l * (2 * s * d * f);
  return m;
}

inline std::uint64_t analytic_step_macs(const DenoiserConfig& config, const StepFlags& flags) {
  return analytic_step_breakdown(config, flags).total();
}

/// Flags the gating controller implies at step j.
inline StepFlags step_flags(int j, const GateSchedule& schedule, bool guidance_enabled = true) {
  const Action cross = decide(j, AttnKind::cross_attn, schedule);
  const Action self = decide(j, AttnKind::self_attn, schedule);
  StepFlags f;
  f.ca_active = cross != Action::reuse;
  f.sa_active = self != Action::reuse;
  const bool collapsed = cross == Action::reuse && schedule.collapse_cfg;
  f.branches = (collapsed || !guidance_enabled) ? 1 : 2;
  return f;
}

/// Peak bytes held by the feature caches: the cross cache holds one (s × D)
/// f32 entry per block, and each branch's self cache holds the same.
inline std::uint64_t cache_memory_bytes(const GateSchedule& schedule, const DenoiserConfig& config,
                                        bool guidance_enabled = true) {
  const auto entry = static_cast<std::uint64_t>(config.blocks) *
                     static_cast<std::uint64_t>(config.tokens()) *
                     static_cast<std::uint64_t>(config.width) * sizeof(float);
  std::uint64_t bytes = 0;
  if (schedule.ca_caching) bytes += entry;
  if (schedule.sa_caching) bytes += (guidance_enabled ? 2u : 1u) * entry;
  return bytes;
}

struct StepCost {
  int step = 0;
  StepFlags flags;
  MacBreakdown analytic;
  std::optional<MacBreakdown> instrumented;
};

struct CostReport {
  std::vector<StepCost> steps;
  MacBreakdown analytic_total;
  std::optional<MacBreakdown> instrumented_total;
  std::uint64_t cache_bytes = 0;
};

inline CostReport trajectory_macs(const GateSchedule& schedule, const DenoiserConfig& config,
                                  bool guidance_enabled = true) {
  schedule.validate();
  CostReport report;
  for (int j = 1; j <= schedule.n; ++j) {
    StepCost c;
    c.step = j;
    c.flags = step_flags(j, schedule, guidance_enabled);
    c.analytic = analytic_step_breakdown(config, c.flags);
    report.analytic_total += c.analytic;
    report.steps.push_back(c);
  }
  report.cache_bytes = cache_memory_bytes(schedule, config, guidance_enabled);
  return report;
}

/// Fills the instrumented columns from an executed trajectory. Any disagreement
/// with the analytic model, per step and per label, is an InvariantError.
inline void attach_instrumented(CostReport& report, const TrajectoryLog& log) {
  if (log.steps.size() != report.steps.size())
    throw InvariantError("cost report covers " + std::to_string(report.steps.size()) +
                         " steps but the trajectory ran " + std::to_string(log.steps.size()));
  MacBreakdown total;
  for (std::size_t i = 0; i < report.steps.size(); ++i) {
    auto& c = report.steps[i];
    const MacBreakdown measured = MacBreakdown::from(log.steps[i].macs);
    if (measured.total() != log.steps[i].macs.total())
      throw InvariantError("instrumented MACs carry an unknown label at step " +
                           std::to_string(c.step));
    if (!(measured == c.analytic) || log.steps[i].branches != c.flags.branches)
      throw InvariantError("analytic MACs " + std::to_string(c.analytic.total()) +
                           " != instrumented " + std::to_string(measured.total()) +
                           " at step " + std::to_string(c.step));
    c.instrumented = measured;
    total += measured;
  }
  report.instrumented_total = total;
}

/// step,branches,ca_active,sa_active,analytic_macs,instrumented_macs,sa_macs,ca_macs,mlp_macs,proj_macs
/// followed by a `total` row. Per-label columns are analytic.
inline std::string cost_csv(const CostReport& report) {
  std::ostringstream os;
  os << "step,branches,ca_active,sa_active,analytic_macs,instrumented_macs,sa_macs,ca_macs,"
        "mlp_macs,proj_macs\n";
  auto line = [&](const std::string& step, const std::string& branches, const std::string& ca,
                  const std::string& sa, const MacBreakdown& a,
                  const std::optional<MacBreakdown>& m) {
    os << step << ',' << branches << ',' << ca << ',' << sa << ',' << a.total() << ',';
    if (m) os << m->total();
    os << ',' << a.sa << ',' << a.ca << ',' << a.mlp << ',' << a.proj << '\n';
  };
  for (const auto& c : report.steps)
    line(std::to_string(c.step), std::to_string(c.flags.branches), c.flags.ca_active ? "1" : "0",
         c.flags.sa_active ? "1" : "0", c.analytic, c.instrumented);
  line("total", "", "", "", report.analytic_total, report.instrumented_total);
  return os.str();
}

/// metric,value summary: totals, the ungated baseline, and cache bytes.
inline std::string cost_summary_csv(const CostReport& report, const DenoiserConfig& config,
                                    bool guidance_enabled = true) {
  const int n = static_cast<int>(report.steps.size());
  const auto baseline = trajectory_macs(GateSchedule::disabled(n), config, guidance_enabled);
  std::ostringstream os;
  os << "metric,value\n";
  os << "analytic_macs_total," << report.analytic_total.total() << '\n';
  os << "instrumented_macs_total,";
  if (report.instrumented_total) os << report.instrumented_total->total();
  os << '\n';
  os << "baseline_macs_total," << baseline.analytic_total.total() << '\n';
  os << "speedup_vs_baseline,"
     << format_double(static_cast<double>(baseline.analytic_total.total()) /
                      static_cast<double>(report.analytic_total.total()))
     << '\n';
  os << "cache_bytes," << report.cache_bytes << '\n';
  return os.str();
}

struct ScaleRow {
  int latent_side = 0;
  int token_factor = 0;
  int tokens = 0;
  int text_tokens = 0;
  std::uint64_t baseline = 0;  // single branch, cross-attention computed
  std::uint64_t gated = 0;     // single branch, cross-attention replayed
};

/// Per-step MACs over latent resolutions and text-length multipliers.
inline std::vector<ScaleRow> scaling_table(const std::vector<int>& resolutions,
                                           const std::vector<int>& token_factors,
                                           const DenoiserConfig& config) {
  std::vector<ScaleRow> rows;
  for (int res : resolutions)
    for (int factor : token_factors) {
      if (res <= 0 || factor <= 0) throw ConfigError("scaling_table: factors must be positive");
      DenoiserConfig c = config;
      c.latent_side = res;
      c.text_len = config.text_len * factor;
      c.validate();
      ScaleRow r;
      r.latent_side = res;
      r.token_factor = factor;
      r.tokens = c.tokens();
      r.text_tokens = c.text_len;
      r.baseline = analytic_step_macs(c, {true, true, 1});
      r.gated = analytic_step_macs(c, {false, true, 1});
      rows.push_back(r);
    }
  return rows;
}

/// latent_side,token_factor,tokens,text_tokens,baseline_macs[,gated_macs]
inline std::string scaling_csv(const std::vector<ScaleRow>& rows, bool with_gating = true) {
  std::ostringstream os;
  os << "latent_side,token_factor,tokens,text_tokens,baseline_macs"
     << (with_gating ? ",gated_macs" : "") << '\n';
  for (const auto& r : rows) {
    os << r.latent_side << ',' << r.token_factor << ',' << r.tokens << ',' << r.text_tokens << ','
       << r.baseline;
    if (with_gating) os << ',' << r.gated;
    os << '\n';
  }
  return os.str();
}

}  // namespace tgate
