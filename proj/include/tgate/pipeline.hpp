#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "tgate/denoiser.hpp"
#include "tgate/gating.hpp"
#include "tgate/guidance.hpp"
#include "tgate/prng.hpp"
#include "tgate/scheduler.hpp"

namespace tgate {

/// Trajectory variants.
///   S      baseline
///   S_F    conditional branch fed the null text after step m
///   S_L    conditional branch fed the null text up to step m
///   SA_F   self-attention interval-cached after step m
///   SA_L   self-attention interval-cached after warm-up, up to step m
///   TGATE  the full gating controller
enum class ModeTag { S, S_F, S_L, SA_F, SA_L, TGATE };

inline const char* to_string(ModeTag t) {
  switch (t) {
    case ModeTag::S: return "S";
    case ModeTag::S_F: return "S_F";
    case ModeTag::S_L: return "S_L";
    case ModeTag::SA_F: return "SA_F";
    case ModeTag::SA_L: return "SA_L";
    case ModeTag::TGATE: return "TGATE";
  }
  return "?";
}

inline ModeTag parse_mode(std::string_view s) {
  for (ModeTag t : {ModeTag::S, ModeTag::S_F, ModeTag::S_L, ModeTag::SA_F, ModeTag::SA_L,
                    ModeTag::TGATE})
    if (s == to_string(t)) return t;
  throw ConfigError("unknown trajectory mode '" + std::string(s) +
                    "' (expected S, S_F, S_L, SA_F, SA_L, TGATE)");
}

inline bool mode_uses_interval(ModeTag t) {
  return t == ModeTag::SA_F || t == ModeTag::SA_L || t == ModeTag::TGATE;
}

struct TrajectoryMode {
  ModeTag tag = ModeTag::S;
  int m = 0;
  int k = 1;
  int warmup = 0;
};

struct RunSettings {
  SamplerKind sampler = SamplerKind::dpm2m;
  int steps = 25;
  GuidanceConfig guidance;
  GateSchedule schedule = GateSchedule::defaults(25);  // used by TGATE
  bool record_maps = false;
  bool timing = false;
};

struct StepLog {
  int step = 0;
  int timestep = 0;
  int branches = 0;
  double eps_mean = 0.0;
  Tensor eps;
  std::vector<std::uint64_t> map_checksums;
  MacCounter macs;
  std::optional<double> wall_ms;
  // Pre-projection cross-attention maps per branch; filled when record_maps.
  std::array<std::vector<Tensor>, 2> cross_maps;
};

struct TrajectoryLog {
  ModeTag mode = ModeTag::S;
  std::vector<StepLog> steps;
  Tensor final_latent;
  MacCounter macs;
};

/// Schedule the gating controller runs for a trajectory mode.
inline GateSchedule schedule_for(const TrajectoryMode& mode, const RunSettings& settings) {
  const int n = settings.steps;
  GateSchedule s = GateSchedule::disabled(n);
  s.warmup = 0;
  switch (mode.tag) {
    case ModeTag::S: break;
    case ModeTag::S_F:
    case ModeTag::S_L: s.m = mode.m; break;
    case ModeTag::SA_F:
      s.m = mode.m;
      s.k = mode.k;
      s.sa_caching = true;
      s.sa_phase = SelfCachePhase::fidelity;
      break;
    case ModeTag::SA_L:
      s.m = mode.m;
      s.k = mode.k;
      s.warmup = std::min(mode.warmup, mode.m);
      s.sa_caching = true;
      s.sa_phase = SelfCachePhase::semantics;
      break;
    case ModeTag::TGATE:
      s = settings.schedule;
      s.n = n;
      break;
  }
  s.validate();
  return s;
}

inline Tensor initial_latent(std::uint64_t seed, const Denoiser& denoiser) {
  Tensor z(denoiser.latent_shape());
  Prng(seed).split("latent").fill_normal(z.data());
  return z;
}

/// Runs one n-step trajectory from the seeded initial latent.
inline TrajectoryLog run(const TrajectoryMode& mode, std::string_view prompt, std::uint64_t seed,
                         const Denoiser& denoiser, const RunSettings& settings) {
  settings.guidance.validate();
  const GateSchedule schedule = schedule_for(mode, settings);
  const TextCondition cond = embed_text(prompt, denoiser.config());
  const TextCondition null_cond = embed_text("", denoiser.config());

  Sampler sampler(settings.sampler, settings.steps);
  GateCaches caches;
  TrajectoryLog log;
  log.mode = mode.tag;
  log.steps.reserve(static_cast<std::size_t>(settings.steps));

  Tensor z = initial_latent(seed, denoiser);
  for (int j = 1; j <= settings.steps; ++j) {
    const TextCondition* branch_cond = &cond;
    if (mode.tag == ModeTag::S_F && j > schedule.m) branch_cond = &null_cond;
    if (mode.tag == ModeTag::S_L && j <= schedule.m) branch_cond = &null_cond;

    StepLog entry;
    entry.step = j;
    entry.timestep = sampler.grid().at(j);
    StepTrace trace;
    trace.keep_maps = settings.record_maps;
    const auto start = std::chrono::steady_clock::now();
    const LatentState state{z, j, entry.timestep};
    entry.eps = run_gated_step(state, *branch_cond, null_cond, schedule, denoiser,
                               settings.guidance, caches, &entry.macs, &trace);
    z = sampler.step(z, entry.eps, j);
    if (settings.timing)
      entry.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
    entry.branches = trace.branches;
    entry.eps_mean = mean(entry.eps);
    entry.map_checksums = std::move(trace.applied_checksums);
    entry.cross_maps = std::move(trace.cross_maps);
    log.macs += entry.macs;
    log.steps.push_back(std::move(entry));
  }
  log.final_latent = std::move(z);
  return log;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// step,timestep,eps_mean,branches,macs,wall_ms,map_checksums
inline std::string trajectory_csv(const TrajectoryLog& log) {
  std::ostringstream os;
  os << "step,timestep,eps_mean,branches,macs,wall_ms,map_checksums\n";
  for (const auto& s : log.steps) {
    os << s.step << ',' << s.timestep << ',' << format_double(s.eps_mean) << ',' << s.branches
       << ',' << s.macs.total() << ',';
    if (s.wall_ms) os << format_double(*s.wall_ms);
    os << ',';
    for (std::size_t i = 0; i < s.map_checksums.size(); ++i)
      os << (i ? ":" : "") << hex64(s.map_checksums[i]);
    os << '\n';
  }
  return os.str();
}

struct SweepGrid {
  std::vector<ModeTag> modes;
  std::vector<int> m_values;
  std::vector<int> k_values;
  int warmup = 2;
  std::vector<std::uint64_t> seeds;
};

struct SweepRow {
  TrajectoryMode mode;
  std::uint64_t seed = 0;
  double latent_l2_vs_S = 0.0;
  double latent_cos_vs_S = 1.0;
  std::uint64_t macs_total = 0;
  std::optional<double> wall_ms;
};

/// Expands the grid into cells, seed-major. Modes without an interval ignore
/// the k grid; S ignores both grids.
inline std::vector<std::pair<TrajectoryMode, std::uint64_t>> sweep_cells(const SweepGrid& grid,
                                                                         int steps) {
  std::vector<std::pair<TrajectoryMode, std::uint64_t>> cells;
  for (std::uint64_t seed : grid.seeds)
    for (ModeTag tag : grid.modes) {
      if (tag == ModeTag::S) {
        cells.push_back({{tag, steps, 1, 0}, seed});
        continue;
      }
      for (int m : grid.m_values) {
        const int warmup = std::min(grid.warmup, m);
        if (!mode_uses_interval(tag)) {
          cells.push_back({{tag, m, 1, 0}, seed});
          continue;
        }
        for (int k : grid.k_values) cells.push_back({{tag, m, k, warmup}, seed});
      }
    }
  return cells;
}

namespace detail {

// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index is
// processed exactly once and results are written by index, so the outcome does
// not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count && !failed;) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

/// Runs every grid cell and measures its final latent against the baseline S
/// trajectory of the same seed.
inline std::vector<SweepRow> ablation_sweep(const SweepGrid& grid, std::string_view prompt,
                                            const Denoiser& denoiser, const RunSettings& settings,
                                            unsigned threads = 1) {
  const auto cells = sweep_cells(grid, settings.steps);
  std::vector<Tensor> baselines(grid.seeds.size());
  detail::parallel_for(grid.seeds.size(), threads, [&](std::size_t i) {
    baselines[i] = run({ModeTag::S}, prompt, grid.seeds[i], denoiser, settings).final_latent;
  });

  std::vector<SweepRow> rows(cells.size());
  detail::parallel_for(cells.size(), threads, [&](std::size_t c) {
    const auto& [mode, seed] = cells[c];
    const auto seed_index = static_cast<std::size_t>(
        std::find(grid.seeds.begin(), grid.seeds.end(), seed) - grid.seeds.begin());
    const auto start = std::chrono::steady_clock::now();
    const TrajectoryLog log = run(mode, prompt, seed, denoiser, settings);
    SweepRow row;
    row.mode = mode;
    row.seed = seed;
    row.latent_l2_vs_S = l2_distance(log.final_latent, baselines[seed_index]);
    row.latent_cos_vs_S = cosine_similarity(log.final_latent, baselines[seed_index]);
    row.macs_total = log.macs.total();
    if (settings.timing)
      row.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    rows[c] = row;
  });
  return rows;
}

/// mode,m,k,warmup,seed,latent_l2_vs_S,latent_cos_vs_S,macs_total,wall_ms
inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "mode,m,k,warmup,seed,latent_l2_vs_S,latent_cos_vs_S,macs_total,wall_ms\n";
  for (const auto& r : rows) {
    os << to_string(r.mode.tag) << ',' << r.mode.m << ',' << r.mode.k << ',' << r.mode.warmup
       << ',' << r.seed << ',' << format_double(r.latent_l2_vs_S) << ','
       << format_double(r.latent_cos_vs_S) << ',' << r.macs_total << ',';
    if (r.wall_ms) os << format_double(*r.wall_ms);
    os << '\n';
  }
  return os.str();
}

}  // namespace tgate
