#pragma once

#include <algorithm>
#include <cmath>
#include <tuple>
#include <utility>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tgate/pipeline.hpp"
#include "tgate/tensor.hpp"

namespace tgate {

/// Per step-pair (j, j+1) statistics of ‖C^{j+1} − C^{j}‖ over a population
/// of recorded cross-attention maps.
struct ConvergenceCurve {
  std::optional<int> block;  // set when grouped per block
  std::vector<double> mean;
  std::vector<double> variance;
};

enum class GroupBy { all, per_block };
enum class BranchFilter { both, conditional, unconditional };

inline BranchFilter parse_branch_filter(std::string_view s) {
  if (s == "both") return BranchFilter::both;
  if (s == "cond") return BranchFilter::conditional;
  if (s == "uncond") return BranchFilter::unconditional;
  throw ConfigError("unknown branch filter '" + std::string(s) + "' (expected both, cond, uncond)");
}

namespace detail {

// Mean and population variance, summed in ascending order so the result does
// not depend on the order samples were gathered in.
inline std::pair<double, double> sorted_moments(std::vector<double> xs) {
  if (xs.empty()) return {0.0, 0.0};
  std::sort(xs.begin(), xs.end());
  double total = 0.0;
  for (double x : xs) total += x;
  const double mu = total / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - mu) * (x - mu);
  return {mu, sq / static_cast<double>(xs.size())};
}

}  // namespace detail

/// Consecutive-step cross-attention difference curves.
///
/// Entry j averages the Frobenius distance between a sublayer's recorded map at
/// steps j and j+1 over every run, selected branch and sublayer (or, per block,
/// over runs and branches only). Variance is the population variance of the
/// same samples.
inline std::vector<ConvergenceCurve> convergence_curve(std::span<const TrajectoryLog> runs,
                                                       GroupBy group_by,
                                                       BranchFilter branches = BranchFilter::both) {
  if (runs.empty()) throw ConfigError("convergence_curve: no runs");
  const std::size_t n = runs.front().steps.size();
  if (n < 2) throw ConfigError("convergence_curve: need at least two steps");
  std::size_t blocks = 0;
  for (const auto& r : runs) {
    if (r.steps.size() != n) throw ConfigError("convergence_curve: runs differ in step count");
  }

  auto branch_selected = [&](int b) {
    return branches == BranchFilter::both || (b == 0 && branches == BranchFilter::conditional) ||
           (b == 1 && branches == BranchFilter::unconditional);
  };

  // A branch participates when the run recorded it at all (a run without
  // guidance has no unconditional branch); a participating branch must carry
  // the same number of maps at every step.
  auto participates = [&](const TrajectoryLog& r, std::size_t b) {
    return branch_selected(static_cast<int>(b)) && !r.steps.front().cross_maps[b].empty();
  };
  for (const auto& r : runs) {
    bool any = false;
    for (std::size_t b = 0; b < 2; ++b) {
      if (branch_selected(static_cast<int>(b)) && branches != BranchFilter::both &&
          r.steps.front().cross_maps[b].empty())
        throw ConfigError("convergence_curve: selected branch has no recorded maps");
      if (!participates(r, b)) continue;
      any = true;
      for (const auto& s : r.steps) {
        const auto have = s.cross_maps[b].size();
        if (have == 0)
          throw ConfigError("convergence_curve: missing recorded maps at step " +
                            std::to_string(s.step));
        if (blocks == 0) blocks = have;
        if (have != blocks) throw ConfigError("convergence_curve: inconsistent sublayer count");
      }
    }
    if (!any) throw ConfigError("convergence_curve: run has no recorded maps");
  }

  const std::size_t groups = group_by == GroupBy::all ? 1 : blocks;
  std::vector<ConvergenceCurve> curves(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    if (group_by == GroupBy::per_block) curves[g].block = static_cast<int>(g);
    curves[g].mean.resize(n - 1);
    curves[g].variance.resize(n - 1);
  }
  for (std::size_t j = 0; j + 1 < n; ++j) {
    std::vector<std::vector<double>> acc(groups);
    for (const auto& r : runs)
      for (std::size_t b = 0; b < 2; ++b) {
        if (!participates(r, b)) continue;
        const auto& now = r.steps[j].cross_maps[b];
        const auto& next = r.steps[j + 1].cross_maps[b];
        for (std::size_t i = 0; i < blocks; ++i)
          acc[group_by == GroupBy::all ? 0 : i].push_back(l2_distance(next[i], now[i]));
      }
    for (std::size_t g = 0; g < groups; ++g) {
      std::tie(curves[g].mean[j], curves[g].variance[j]) = detail::sorted_moments(std::move(acc[g]));
    }
  }
  return curves;
}

/// Mean of the guided noise prediction at each step.
inline std::vector<double> noise_mean_curve(const TrajectoryLog& log) {
  std::vector<double> out;
  out.reserve(log.steps.size());
  for (const auto& s : log.steps) out.push_back(mean(s.eps));
  return out;
}

/// ‖frames[i+1] − frames[i]‖₂ for each adjacent pair.
inline std::vector<double> sequence_l2(std::span<const Tensor> frames) {
  if (frames.size() < 2) throw ConfigError("sequence_l2: need at least two frames");
  std::vector<double> out;
  out.reserve(frames.size() - 1);
  for (std::size_t i = 0; i + 1 < frames.size(); ++i)
    out.push_back(l2_distance(frames[i + 1], frames[i]));
  return out;
}

/// step_pair,mean,variance[,block]; step_pair is the 1-based j of (j, j+1).
inline std::string convergence_csv(const std::vector<ConvergenceCurve>& curves) {
  const bool per_block = !curves.empty() && curves.front().block.has_value();
  std::ostringstream os;
  os << "step_pair,mean,variance" << (per_block ? ",block" : "") << '\n';
  for (const auto& c : curves)
    for (std::size_t j = 0; j < c.mean.size(); ++j) {
      os << j + 1 << ',' << format_double(c.mean[j]) << ',' << format_double(c.variance[j]);
      if (per_block) os << ',' << *c.block;
      os << '\n';
    }
  return os.str();
}

}  // namespace tgate
