#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "tgate/tgate.hpp"

using namespace tgate;
namespace fs = std::filesystem;

namespace {

constexpr const char* kPrompt = "a red cube on a wooden table";

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s %2d %s%s%s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.empty() ? "" : ": ",
              o.detail.c_str());
  std::fflush(stdout);
}

GateSchedule gated(int n, int m, int k, int warmup = 2) {
  GateSchedule s;
  s.n = n;
  s.m = m;
  s.k = k;
  s.warmup = warmup;
  return s;
}

GateSchedule ca_only(int n, int m) {
  GateSchedule s = gated(n, m, 1);
  s.sa_caching = false;
  return s;
}

bool same_trajectory(const TrajectoryLog& a, const TrajectoryLog& b) {
  if (!a.final_latent.bit_equal(b.final_latent) || a.steps.size() != b.steps.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i)
    if (!a.steps[i].eps.bit_equal(b.steps[i].eps)) return false;
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Tensor seeded(std::uint64_t seed, Shape shape) {
  Tensor t(std::move(shape));
  Prng(seed).fill_normal(t.data());
  return t;
}

long double ref_l2(const Tensor& a, const Tensor& b) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const long double d = static_cast<long double>(a[i]) - static_cast<long double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

Tensor drive_gated(const Denoiser& d, const GateSchedule& s, std::uint64_t seed,
                   const std::function<void(int, const StepTrace&)>& visit) {
  const auto cond = embed_text(kPrompt, d.config());
  const auto null_cond = embed_text("", d.config());
  Sampler sampler(SamplerKind::dpm2m, s.n);
  GateCaches caches;
  Tensor z = initial_latent(seed, d);
  for (int j = 1; j <= s.n; ++j) {
    StepTrace trace;
    const Tensor eps = run_gated_step({z, j, sampler.grid().at(j)}, cond, null_cond, s, d,
                                      GuidanceConfig{}, caches, nullptr, &trace);
    visit(j, trace);
    z = sampler.step(z, eps, j);
  }
  return z;
}

Outcome noop_identity() {
  const Denoiser d{DenoiserConfig{}};
  RunSettings settings;
  settings.schedule = GateSchedule::disabled(25);
  for (std::uint64_t seed : {7, 11, 13})
    if (!same_trajectory(run({ModeTag::TGATE}, kPrompt, seed, d, settings),
                         run({ModeTag::S}, kPrompt, seed, d, settings)))
      return {false, "seed " + std::to_string(seed) + " diverges"};
  return {true, "seeds 7, 11, 13 bit-identical"};
}

Outcome branch_collapse() {
  const Denoiser d{DenoiserConfig{}};
  auto on = gated(25, 15, 5);
  auto off = on;
  off.collapse_cfg = false;
  double worst = 0.0;
  bool two_branches = true;
  const Tensor z_off = drive_gated(d, off, 7, [&](int j, const StepTrace& t) {
    if (j <= 15) return;
    if (t.branches != 2) {
      two_branches = false;
      return;
    }
    worst = std::max(worst, static_cast<double>(max_abs_diff(t.branch_eps[0], t.branch_eps[1])));
  });
  const Tensor z_on = drive_gated(d, on, 7, [](int, const StepTrace&) {});
  const bool ok = two_branches && worst == 0.0 && z_on.bit_equal(z_off);
  return {ok, "max|eps_c - eps_u| after gate = " + std::to_string(worst) +
                  (z_on.bit_equal(z_off) ? ", collapse on/off latents identical" : ", latents differ")};
}

Outcome boundary_identities() {
  const Denoiser d{DenoiserConfig{}};
  const RunSettings settings;
  const auto s = run({ModeTag::S}, kPrompt, 7, d, settings);
  const bool sf = same_trajectory(run({ModeTag::S_F, 25}, kPrompt, 7, d, settings), s);
  const bool sl = same_trajectory(run({ModeTag::S_L, 0}, kPrompt, 7, d, settings), s);
  const bool saf = same_trajectory(run({ModeTag::SA_F, 10, 1, 0}, kPrompt, 7, d, settings), s);
  const bool sal = same_trajectory(run({ModeTag::SA_L, 10, 1, 2}, kPrompt, 7, d, settings), s);
  auto mark = [](bool b) { return b ? "ok" : "DIFF"; };
  return {sf && sl && saf && sal, std::string("S_F(25) ") + mark(sf) + ", S_L(0) " + mark(sl) +
                                      ", SA_F(k=1) " + mark(saf) + ", SA_L(k=1) " + mark(sal)};
}

Outcome scheduler_oracle() {
  Tensor z0({4, 8, 8}), noise({4, 8, 8});
  Prng(5).split("z0").fill_normal(z0.data());
  Prng(5).split("noise").fill_normal(noise.data());
  float worst = 0.0f;
  for (auto kind : {SamplerKind::ddim, SamplerKind::dpm2m, SamplerKind::euler})
    for (int n : {1, 5, 25}) {
      Sampler sampler(kind, n);
      const int t = sampler.grid().at(1);
      const auto a = static_cast<float>(sampler.table().alpha(t));
      const auto sg = static_cast<float>(sampler.table().sigma(t));
      Tensor z(z0.shape());
      for (std::size_t i = 0; i < z.numel(); ++i) z[i] = a * z0[i] + sg * noise[i];
      for (int j = 1; j <= n; ++j) z = sampler.step(z, noise, j);
      worst = std::max(worst, max_abs_diff(z, z0));
    }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max-abs recovery error %.3g", worst);
  return {worst <= 1e-4f, buf};
}

Outcome exact_cost() {
  DenoiserConfig small;
  small.latent_side = 4;
  small.width = 16;
  small.heads = 2;
  small.blocks = 2;
  DenoiserConfig rect;
  rect.latent_side = 6;
  rect.patch = 2;
  rect.width = 24;
  rect.heads = 3;
  rect.blocks = 3;
  rect.text_len = 3;
  rect.text_dim = 20;
  rect.mlp_ratio = 2;
  int cells = 0;
  for (const auto& c : {DenoiserConfig{}, small, rect}) {
    const Denoiser d(c);
    for (const auto& s : {GateSchedule::disabled(25), gated(25, 15, 3), gated(25, 10, 5)}) {
      RunSettings settings;
      settings.schedule = s;
      const TrajectoryLog log = run({ModeTag::TGATE}, kPrompt, 7, d, settings);
      CostReport report = trajectory_macs(s, c);
      attach_instrumented(report, log);
      for (std::size_t j = 0; j < log.steps.size(); ++j)
        if (analytic_step_macs(c, report.steps[j].flags) != log.steps[j].macs.total())
          return {false, "step " + std::to_string(j + 1) + " differs"};
      if (report.analytic_total.total() != log.macs.total()) return {false, "totals differ"};
      ++cells;
    }
  }
  return {true, std::to_string(cells) + " config x schedule cells equal"};
}

Outcome mac_ordering() {
  const DenoiserConfig c;
  auto total = [&](const GateSchedule& s) { return trajectory_macs(s, c).analytic_total.total(); };
  const auto base = total(GateSchedule::disabled(25));
  const auto a = total(gated(25, 10, 5)), b = total(gated(25, 10, 3)), ca10 = total(ca_only(25, 10));
  const auto e = total(gated(25, 15, 5)), f = total(gated(25, 15, 3)), ca15 = total(ca_only(25, 15));
  std::ostringstream os;
  os << "(10,5) " << a << " < (10,3) " << b << " < (10,CA) " << ca10 << " < base " << base
     << "; (15,5) " << e << " < (15,3) " << f << " < (15,CA) " << ca15;
  return {a < b && b < ca10 && ca10 < base && e < f && f < ca15, os.str()};
}

Outcome scaling_shape() {
  const auto rows = scaling_table({8, 16, 32}, {1, 128, 1024}, DenoiserConfig{});
  if (rows.size() != 9) return {false, "expected 9 rows"};
  for (std::size_t r = 0; r < 9; r += 3) {
    if (rows[r].gated != rows[r + 1].gated || rows[r].gated != rows[r + 2].gated)
      return {false, "gated column varies at side " + std::to_string(rows[r].latent_side)};
    if (!(rows[r].baseline < rows[r + 1].baseline && rows[r + 1].baseline < rows[r + 2].baseline))
      return {false, "baseline not increasing at side " + std::to_string(rows[r].latent_side)};
  }
  return {true, "gated constant per resolution, baseline increasing"};
}

Outcome interval_count() {
  int grids = 0;
  for (int k = 1; k <= 5; ++k)
    for (int m : {10, 15})
      for (int warmup : {0, 2}) {
        const auto s = gated(25, m, k, warmup);
        int computed = 0;
        for (int j = warmup + 1; j <= m; ++j)
          if (decide(j, AttnKind::self_attn, s) == Action::compute_and_record) ++computed;
        const int expected = (m - warmup + k - 1) / k;
        if (computed != expected)
          return {false, "k=" + std::to_string(k) + " m=" + std::to_string(m) + " warmup=" +
                             std::to_string(warmup) + ": " + std::to_string(computed)};
        ++grids;
      }
  return {true, std::to_string(grids) + " grids match the ceiling"};
}

Outcome analysis_oracle() {
  double worst = 0.0;
  for (std::uint64_t fixture = 0; fixture < 10; ++fixture) {
    const int steps = 3 + static_cast<int>(fixture % 4);
    const int blocks = 1 + static_cast<int>(fixture % 3);
    TrajectoryLog log;
    std::vector<Tensor> frames;
    for (int j = 0; j < steps; ++j) {
      StepLog s;
      for (std::size_t b = 0; b < 2; ++b)
        for (int i = 0; i < blocks; ++i)
          s.cross_maps[b].push_back(seeded(fixture * 1000 + static_cast<std::uint64_t>(j * 10 + b * 5 + i), {4, 6}));
      log.steps.push_back(std::move(s));
      frames.push_back(seeded(fixture * 1000 + 500 + static_cast<std::uint64_t>(j), {4, 6}));
    }
    const auto curve = convergence_curve(std::span(&log, 1), GroupBy::all);
    const auto seq = sequence_l2(frames);
    for (int j = 0; j + 1 < steps; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      std::vector<long double> xs;
      for (std::size_t b = 0; b < 2; ++b)
        for (int i = 0; i < blocks; ++i) {
          const auto si = static_cast<std::size_t>(i);
          xs.push_back(ref_l2(log.steps[sj + 1].cross_maps[b][si], log.steps[sj].cross_maps[b][si]));
        }
      long double mu = 0.0L, var = 0.0L;
      for (auto x : xs) mu += x;
      mu /= static_cast<long double>(xs.size());
      for (auto x : xs) var += (x - mu) * (x - mu);
      var /= static_cast<long double>(xs.size());
      worst = std::max({worst, std::abs(curve[0].mean[sj] - static_cast<double>(mu)),
                        std::abs(curve[0].variance[sj] - static_cast<double>(var)),
                        std::abs(seq[sj] - static_cast<double>(ref_l2(frames[sj + 1], frames[sj])))});
    }
  }
  TrajectoryLog flat;
  const Tensor map = seeded(3, {4, 6});
  for (int j = 0; j < 5; ++j) {
    StepLog s;
    s.cross_maps[0] = {map, map};
    s.cross_maps[1] = {map, map};
    flat.steps.push_back(std::move(s));
  }
  bool zeros = true;
  const auto flat_curve = convergence_curve(std::span(&flat, 1), GroupBy::all);
  for (double v : flat_curve[0].mean) zeros = zeros && v == 0.0;
  for (double v : sequence_l2(std::vector<Tensor>(4, map))) zeros = zeros && v == 0.0;
  char buf[96];
  std::snprintf(buf, sizeof buf, "worst deviation %.3g over 10 fixtures, identical maps %s", worst,
                zeros ? "exactly 0" : "NONZERO");
  return {worst <= 1e-6 && zeros, buf};
}

Outcome convergence_trend() {
  const Tensor base = seeded(77, {6, 8}), delta = seeded(78, {6, 8});
  TrajectoryLog log;
  for (int j = 1; j <= 8; ++j) {
    StepLog s;
    Tensor m = base;
    for (std::size_t e = 0; e < m.numel(); ++e) m[e] += static_cast<float>(std::ldexp(1.0, -j)) * delta[e];
    s.cross_maps[0].push_back(m);
    log.steps.push_back(std::move(s));
  }
  const auto c = convergence_curve(std::span(&log, 1), GroupBy::all);
  double worst = 0.0;
  for (std::size_t j = 0; j + 1 < c[0].mean.size(); ++j)
    worst = std::max(worst, std::abs(c[0].mean[j + 1] / c[0].mean[j] - 0.5));

  const Denoiser d{DenoiserConfig{}};
  RunSettings settings;
  settings.record_maps = true;
  const auto toy = run({ModeTag::S}, kPrompt, 7, d, settings);
  const auto curve = convergence_curve(std::span(&toy, 1), GroupBy::all)[0].mean;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "fixture ratio within %.2g of 0.5; toy model curve %.4g (steps 1-2) -> %.4g (steps 12-13) -> %.4g (steps 24-25)",
                worst, curve.front(), curve[11], curve.back());
  return {worst <= 1e-3, buf};
}

Outcome determinism() {
  RunConfig config;
  config.prompts = {kPrompt, "a blue sphere"};
  config.seeds = {7};
  const fs::path root = fs::temp_directory_path() / "tgate_acceptance";
  fs::remove_all(root);
  cmd_generate(config, root / "a", root / "wa");
  cmd_generate(config, root / "b", root / "wb");
  for (const auto& [x, y] : {std::pair{"a", "b"}, std::pair{"wa", "wb"}})
    for (const auto& e : fs::directory_iterator(root / x))
      if (slurp(e.path()) != slurp(root / y / e.path().filename()))
        return {false, e.path().filename().string() + " differs"};
  fs::remove_all(root);
  RunConfig grid = config;
  grid.steps = 10;
  grid.seeds = {7, 11};
  grid.ablate_m = {3, 6};
  if (cmd_ablate(grid, 1, true) != cmd_ablate(grid, 3, true)) return {false, "ablate differs"};
  if (cmd_converge(grid) != cmd_converge(grid)) return {false, "converge differs"};
  std::string s1, s2;
  if (cmd_cost(config, &s1) != cmd_cost(config, &s2) || s1 != s2) return {false, "cost differs"};
  if (cmd_scale(config) != cmd_scale(config)) return {false, "scale differs"};
  return {true, "generate, ablate, converge, cost, scale byte-identical"};
}

Outcome latency() {
  DenoiserConfig c;
  c.latent_side = 32;
  c.width = 256;
  c.heads = 8;
  c.blocks = 8;
  const Denoiser d(c);
  RunSettings settings;
  settings.timing = true;
  settings.schedule = gated(25, 15, 5);
  auto wall = [&](ModeTag tag) {
    const auto t0 = std::chrono::steady_clock::now();
    run({tag}, kPrompt, 7, d, settings);
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };
  const double base = wall(ModeTag::S);
  const double ours = wall(ModeTag::TGATE);
  char buf[96];
  std::snprintf(buf, sizeof buf, "baseline %.0f ms, TGATE(15,5) %.0f ms (%.2fx)", base, ours, base / ours);
  return {ours < base, buf};
}

}  // namespace

int main() {
  criterion(1, "no-op identity", noop_identity);
  criterion(2, "branch collapse equality", branch_collapse);
  criterion(3, "boundary identities", boundary_identities);
  criterion(4, "scheduler oracle", scheduler_oracle);
  criterion(5, "exact cost equality", exact_cost);
  criterion(6, "MAC ordering", mac_ordering);
  criterion(7, "scaling table shape", scaling_shape);
  criterion(8, "interval count", interval_count);
  criterion(9, "analysis correctness", analysis_oracle);
  criterion(10, "convergence trend proxy", convergence_trend);
  criterion(11, "determinism", determinism);
  criterion(12, "latency smoke", latency);
  std::printf("%d of 12 criteria passed\n", 12 - failures);
  return failures == 0 ? 0 : 1;
}
