#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tgate/tensor.hpp"

namespace tgate {

/// Linear-beta DDPM schedule. alpha_bar is accumulated in double; alpha, sigma
/// and lambda are derived from it on demand.
class NoiseScheduleTable {
 public:
  explicit NoiseScheduleTable(int train_steps = 1000, double beta_start = 1e-4,
                              double beta_end = 2e-2)
      : alpha_bar_(static_cast<std::size_t>(train_steps)) {
    if (train_steps < 1) throw ConfigError("train_steps must be positive");
    double prod = 1.0;
    for (int t = 0; t < train_steps; ++t) {
      const double beta = train_steps == 1
                              ? beta_start
                              : beta_start + (beta_end - beta_start) * t / (train_steps - 1);
      prod *= 1.0 - beta;
      alpha_bar_[static_cast<std::size_t>(t)] = prod;
    }
  }

  int train_steps() const { return static_cast<int>(alpha_bar_.size()); }

  // kTerminal stands for the clean endpoint after the last inference step:
  // alpha = 1, sigma = 0.
  static constexpr int kTerminal = -1;

  double alpha_bar(int t) const { return t == kTerminal ? 1.0 : alpha_bar_.at(static_cast<std::size_t>(t)); }
  double alpha(int t) const { return std::sqrt(alpha_bar(t)); }
  double sigma(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }
  // log-SNR; +inf at the terminal point.
  double lambda(int t) const {
    if (t == kTerminal) return std::numeric_limits<double>::infinity();
    return std::log(alpha(t) / sigma(t));
  }

 private:
  std::vector<double> alpha_bar_;
};

/// Descending training-grid timesteps for an n-step run.
struct StepGrid {
  std::vector<int> timesteps;

  int steps() const { return static_cast<int>(timesteps.size()); }
  // Timestep processed at 1-based step j.
  int at(int j) const { return timesteps.at(static_cast<std::size_t>(j - 1)); }
  // Timestep reached after step j; kTerminal after the final step.
  int next(int j) const { return j < steps() ? at(j + 1) : NoiseScheduleTable::kTerminal; }
};

/// Evenly spaced integer grid from N-1 down to 0: t_j = round((N-1)(n-j)/(n-1)).
/// A single-step grid is {N-1}.
inline StepGrid build_grid(int n, const NoiseScheduleTable& table) {
  const int big_n = table.train_steps();
  if (n < 1 || n > big_n)
    throw ConfigError("step count " + std::to_string(n) + " outside [1, " +
                      std::to_string(big_n) + "]");
  StepGrid g;
  g.timesteps.reserve(static_cast<std::size_t>(n));
  if (n == 1) {
    g.timesteps.push_back(big_n - 1);
    return g;
  }
  for (int j = 1; j <= n; ++j) {
    const double t = static_cast<double>(big_n - 1) * (n - j) / (n - 1);
    g.timesteps.push_back(static_cast<int>(std::lround(t)));
  }
  return g;
}

namespace detail {

inline void require_step(int j, const StepGrid& grid) {
  if (j < 1 || j > grid.steps())
    throw ConfigError("step index " + std::to_string(j) + " outside [1, " +
                      std::to_string(grid.steps()) + "]");
}

}  // namespace detail

// x0 = (z − σ·ε̂)/α
inline Tensor predict_x0(const Tensor& z, const Tensor& eps_hat, int t,
                         const NoiseScheduleTable& table) {
  require_same_shape(z, eps_hat, "predict_x0");
  const auto a = static_cast<float>(table.alpha(t));
  const auto s = static_cast<float>(table.sigma(t));
  Tensor x0(z.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) x0[i] = (z[i] - s * eps_hat[i]) / a;
  return x0;
}

/// Deterministic (eta = 0) DDIM update from grid step j to the next grid point.
inline Tensor ddim_step(const Tensor& z, const Tensor& eps_hat, int j, const StepGrid& grid,
                        const NoiseScheduleTable& table) {
  detail::require_step(j, grid);
  const int t = grid.at(j), tn = grid.next(j);
  const Tensor x0 = predict_x0(z, eps_hat, t, table);
  const auto an = static_cast<float>(table.alpha(tn));
  const auto sn = static_cast<float>(table.sigma(tn));
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) out[i] = an * x0[i] + sn * eps_hat[i];
  require_finite(out, "ddim step");
  return out;
}

struct DpmHistory {
  std::optional<Tensor> x0_prev;
};

/// DPM-Solver++(2M), data-prediction multistep form, stepping in log-SNR.
/// Step 1 and the final step into the clean endpoint are first order.
inline Tensor dpm_solverpp_2m_step(const Tensor& z, const Tensor& eps_hat, DpmHistory& history,
                                   int j, const StepGrid& grid, const NoiseScheduleTable& table) {
  detail::require_step(j, grid);
  if (j >= 2 && !history.x0_prev)
    throw ConfigError("dpm-solver++(2m) needs the previous x0 prediction at step " +
                      std::to_string(j));
  const int t = grid.at(j), tn = grid.next(j);
  Tensor x0 = predict_x0(z, eps_hat, t, table);

  const double lam = table.lambda(t), lam_n = table.lambda(tn);
  const double h = lam_n - lam;
  const double exp_neg_h = std::exp(-h);  // 0 at the terminal point
  const auto ratio = static_cast<float>(table.sigma(tn) / table.sigma(t));
  const auto coef = static_cast<float>(-table.alpha(tn) * (exp_neg_h - 1.0));

  Tensor used = x0;
  if (j >= 2 && tn != NoiseScheduleTable::kTerminal) {
    const double h_prev = lam - table.lambda(grid.at(j - 1));
    const double r = h_prev / h;
    const auto c_cur = static_cast<float>(1.0 + 1.0 / (2.0 * r));
    const auto c_prev = static_cast<float>(1.0 / (2.0 * r));
    const Tensor& prev = *history.x0_prev;
    require_same_shape(prev, x0, "dpm history");
    for (std::size_t i = 0; i < used.numel(); ++i) used[i] = c_cur * x0[i] - c_prev * prev[i];
  }

  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) out[i] = ratio * z[i] + coef * used[i];
  require_finite(out, "dpm-solver++ step");
  history.x0_prev = std::move(x0);
  return out;
}

/// Euler step of the probability-flow ODE in x = z/α with noise level σ/α.
inline Tensor euler_step(const Tensor& z, const Tensor& eps_hat, int j, const StepGrid& grid,
                         const NoiseScheduleTable& table) {
  detail::require_step(j, grid);
  require_same_shape(z, eps_hat, "euler_step");
  const int t = grid.at(j), tn = grid.next(j);
  const double a = table.alpha(t), an = table.alpha(tn);
  const auto inv_a = static_cast<float>(1.0 / a);
  const auto dsig = static_cast<float>(table.sigma(tn) / an - table.sigma(t) / a);
  const auto fan = static_cast<float>(an);
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) {
    const float x = z[i] * inv_a;
    out[i] = fan * (x + dsig * eps_hat[i]);
  }
  require_finite(out, "euler step");
  return out;
}

enum class SamplerKind { ddim, dpm2m, euler };

inline const char* to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::ddim: return "ddim";
    case SamplerKind::dpm2m: return "dpm2m";
    case SamplerKind::euler: return "euler";
  }
  return "?";
}

inline SamplerKind parse_sampler(std::string_view s) {
  if (s == "ddim") return SamplerKind::ddim;
  if (s == "dpm2m") return SamplerKind::dpm2m;
  if (s == "euler") return SamplerKind::euler;
  throw ConfigError("unknown scheduler '" + std::string(s) + "' (expected ddim, dpm2m, euler)");
}

/// One trajectory's sampler: grid, table, and the multistep history.
class Sampler {
 public:
  Sampler(SamplerKind kind, int steps, NoiseScheduleTable table = NoiseScheduleTable())
      : kind_(kind), table_(std::move(table)), grid_(build_grid(steps, table_)) {}

  SamplerKind kind() const { return kind_; }
  const StepGrid& grid() const { return grid_; }
  const NoiseScheduleTable& table() const { return table_; }

  Tensor step(const Tensor& z, const Tensor& eps_hat, int j) {
    switch (kind_) {
      case SamplerKind::ddim: return ddim_step(z, eps_hat, j, grid_, table_);
      case SamplerKind::dpm2m: return dpm_solverpp_2m_step(z, eps_hat, history_, j, grid_, table_);
      case SamplerKind::euler: return euler_step(z, eps_hat, j, grid_, table_);
    }
    throw ConfigError("unknown sampler");
  }

 private:
  SamplerKind kind_;
  NoiseScheduleTable table_;
  StepGrid grid_;
  DpmHistory history_;
};

}  // namespace tgate
