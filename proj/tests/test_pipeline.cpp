#include <algorithm>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "tgate/pipeline.hpp"

using namespace tgate;

namespace {

constexpr const char* kPrompt = "a red cube on a wooden table";

const Denoiser& toy() {
  static const Denoiser d{DenoiserConfig{}};
  return d;
}

bool same_trajectory(const TrajectoryLog& a, const TrajectoryLog& b) {
  if (!a.final_latent.bit_equal(b.final_latent) || a.steps.size() != b.steps.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i)
    if (!a.steps[i].eps.bit_equal(b.steps[i].eps)) return false;
  return true;
}

std::size_t data_rows(const std::string& csv) {
  return static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) - 1;
}

}  // namespace

TEST(Mode, ParseAndPrint) {
  for (auto t : {ModeTag::S, ModeTag::S_F, ModeTag::S_L, ModeTag::SA_F, ModeTag::SA_L, ModeTag::TGATE})
    EXPECT_EQ(parse_mode(to_string(t)), t);
  EXPECT_THROW(parse_mode("S_X"), ConfigError);
}

TEST(Run, Deterministic) {
  const RunSettings settings;
  EXPECT_TRUE(same_trajectory(run({ModeTag::TGATE}, kPrompt, 7, toy(), settings),
                              run({ModeTag::TGATE}, kPrompt, 7, toy(), settings)));
  EXPECT_FALSE(run({ModeTag::S}, kPrompt, 7, toy(), settings)
                   .final_latent.bit_equal(run({ModeTag::S}, kPrompt, 8, toy(), settings).final_latent));
}

TEST(Run, LogShape) {
  const auto log = run({ModeTag::S}, kPrompt, 7, toy(), RunSettings{});
  ASSERT_EQ(log.steps.size(), 25u);
  for (std::size_t i = 0; i < 25; ++i) {
    EXPECT_EQ(log.steps[i].step, static_cast<int>(i) + 1);
    if (i) EXPECT_LT(log.steps[i].timestep, log.steps[i - 1].timestep);
    EXPECT_EQ(log.steps[i].map_checksums.size(), 8u);
    EXPECT_FALSE(log.steps[i].wall_ms.has_value());
  }
  EXPECT_EQ(log.final_latent.shape(), toy().latent_shape());
  EXPECT_TRUE(log.final_latent.all_finite());
}

TEST(Run, GateBoundaryIdentities) {
  const RunSettings settings;
  const auto s = run({ModeTag::S}, kPrompt, 7, toy(), settings);
  EXPECT_TRUE(same_trajectory(run({ModeTag::S_F, 25}, kPrompt, 7, toy(), settings), s));
  EXPECT_TRUE(same_trajectory(run({ModeTag::S_L, 0}, kPrompt, 7, toy(), settings), s));
}

TEST(Run, UnitIntervalSelfCachingMatchesBaseline) {
  const RunSettings settings;
  const auto s = run({ModeTag::S}, kPrompt, 7, toy(), settings);
  EXPECT_TRUE(same_trajectory(run({ModeTag::SA_F, 10, 1, 0}, kPrompt, 7, toy(), settings), s));
  EXPECT_TRUE(same_trajectory(run({ModeTag::SA_L, 10, 1, 2}, kPrompt, 7, toy(), settings), s));
}

TEST(Run, DisabledGatingMatchesBaseline) {
  RunSettings settings;
  settings.schedule = GateSchedule::disabled(25);
  EXPECT_TRUE(same_trajectory(run({ModeTag::TGATE}, kPrompt, 7, toy(), settings),
                              run({ModeTag::S}, kPrompt, 7, toy(), settings)));
}

TEST(Run, TgateStepCostProfile) {
  const RunSettings settings;  // m = 15, k = 5, warm-up 2
  const auto log = run({ModeTag::TGATE}, kPrompt, 7, toy(), settings);
  const auto full = log.steps[0].macs.total();
  std::uint64_t early_min = full;
  for (int j = 1; j <= 15; ++j) {
    const auto& st = log.steps[static_cast<std::size_t>(j - 1)];
    EXPECT_EQ(st.branches, 2);
    if (decide(j, AttnKind::self_attn, settings.schedule) == Action::reuse)
      EXPECT_LT(st.macs.total(), full);
    else
      EXPECT_EQ(st.macs.total(), full);
    early_min = std::min(early_min, st.macs.total());
  }
  for (int j = 16; j <= 25; ++j) {
    const auto& st = log.steps[static_cast<std::size_t>(j - 1)];
    EXPECT_EQ(st.branches, 1);
    EXPECT_LT(st.macs.total(), early_min);
    EXPECT_EQ(st.macs.of("ca"), 0u);
  }
}

TEST(Run, ConditionSwapsReported) {
  // Direction of the divergence on random weights is reported, not asserted.
  const RunSettings settings;
  const auto s = run({ModeTag::S}, kPrompt, 7, toy(), settings);
  const double late = l2_distance(run({ModeTag::S_F, 10}, kPrompt, 7, toy(), settings).final_latent, s.final_latent);
  const double early = l2_distance(run({ModeTag::S_L, 10}, kPrompt, 7, toy(), settings).final_latent, s.final_latent);
  EXPECT_GT(early, 0.0);
  EXPECT_GT(late, 0.0);
  RecordProperty("l2_S_L10", std::to_string(early));
  RecordProperty("l2_S_F10", std::to_string(late));
}

TEST(Run, SamplersAllComplete) {
  for (auto kind : {SamplerKind::ddim, SamplerKind::dpm2m, SamplerKind::euler}) {
    RunSettings settings;
    settings.sampler = kind;
    settings.steps = 10;
    settings.schedule = GateSchedule::defaults(10);
    EXPECT_TRUE(run({ModeTag::TGATE}, kPrompt, 3, toy(), settings).final_latent.all_finite());
  }
}

TEST(Run, TimingFillsWallClock) {
  RunSettings settings;
  settings.steps = 3;
  settings.schedule = GateSchedule::defaults(3);
  settings.timing = true;
  const auto log = run({ModeTag::TGATE}, kPrompt, 7, toy(), settings);
  for (const auto& s : log.steps) ASSERT_TRUE(s.wall_ms.has_value());
}

TEST(TrajectoryCsv, Columns) {
  RunSettings settings;
  settings.steps = 4;
  settings.schedule = GateSchedule::defaults(4);
  const std::string csv = trajectory_csv(run({ModeTag::TGATE}, kPrompt, 7, toy(), settings));
  std::istringstream in(csv);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "step,timestep,eps_mean,branches,macs,wall_ms,map_checksums");
  EXPECT_EQ(first.rfind("1,999,", 0), 0u);
  EXPECT_EQ(data_rows(csv), 4u);
}

TEST(Sweep, GateStepGridRows) {
  SweepGrid grid{{ModeTag::S_F, ModeTag::S_L}, {3, 5, 10}, {3, 5}, 2, {7}};
  const auto rows = ablation_sweep(grid, kPrompt, toy(), RunSettings{});
  ASSERT_EQ(rows.size(), 6u);
  const std::string csv = sweep_csv(rows);
  EXPECT_EQ(data_rows(csv), 6u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "mode,m,k,warmup,seed,latent_l2_vs_S,latent_cos_vs_S,macs_total,wall_ms");
}

TEST(Sweep, SelfCachingGridRows) {
  SweepGrid grid{{ModeTag::SA_F, ModeTag::SA_L}, {10}, {3, 5}, 2, {7}};
  const auto rows = ablation_sweep(grid, kPrompt, toy(), RunSettings{});
  EXPECT_EQ(rows.size(), 4u);
  for (const auto& r : rows) EXPECT_GT(r.latent_l2_vs_S, 0.0);
}

TEST(Sweep, EmptySeedsGiveHeaderOnly) {
  SweepGrid grid{{ModeTag::S_F}, {3}, {3}, 2, {}};
  const std::string csv = sweep_csv(ablation_sweep(grid, kPrompt, toy(), RunSettings{}));
  EXPECT_EQ(data_rows(csv), 0u);
}

TEST(Sweep, BaselineCellHasZeroDivergence) {
  SweepGrid grid{{ModeTag::S}, {3}, {3}, 2, {7}};
  const auto rows = ablation_sweep(grid, kPrompt, toy(), RunSettings{});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].latent_l2_vs_S, 0.0);
  EXPECT_DOUBLE_EQ(rows[0].latent_cos_vs_S, 1.0);
}

TEST(Sweep, ThreadCountDoesNotChangeResults) {
  RunSettings settings;
  settings.steps = 6;
  SweepGrid grid{{ModeTag::S_F, ModeTag::SA_L}, {2, 4}, {2}, 1, {7, 11}};
  EXPECT_EQ(sweep_csv(ablation_sweep(grid, kPrompt, toy(), settings, 1)),
            sweep_csv(ablation_sweep(grid, kPrompt, toy(), settings, 3)));
}
