#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tgate/denoiser.hpp"
#include "tgate/guidance.hpp"
#include "tgate/kernels.hpp"
#include "tgate/tensor.hpp"

namespace tgate {

enum class AnchorMode { average, conditional, unconditional };

inline const char* to_string(AnchorMode a) {
  switch (a) {
    case AnchorMode::average: return "average";
    case AnchorMode::conditional: return "cond";
    case AnchorMode::unconditional: return "uncond";
  }
  return "?";
}

inline AnchorMode parse_anchor(std::string_view s) {
  if (s == "average") return AnchorMode::average;
  if (s == "cond" || s == "conditional") return AnchorMode::conditional;
  if (s == "uncond" || s == "unconditional") return AnchorMode::unconditional;
  throw ConfigError("unknown anchor mode '" + std::string(s) + "' (expected average, cond, uncond)");
}

// Which phase self-attention interval caching applies to. TGATE caches in the
// semantics-planning phase (steps ≤ m); the fidelity variant exists for the
// self-attention ablation trajectory.
enum class SelfCachePhase { semantics, fidelity };

/// The full gating policy for one n-step trajectory.
struct GateSchedule {
  int n = 25;
  int m = 15;       // gate step
  int k = 5;        // self-attention refresh interval; 1 disables reuse
  int warmup = 2;   // leading steps that always compute self-attention
  bool sa_caching = true;
  bool ca_caching = true;
  AnchorMode anchor = AnchorMode::average;
  bool collapse_cfg = true;
  SelfCachePhase sa_phase = SelfCachePhase::semantics;

  static int default_gate_step(int n) { return (3 * n + 4) / 5; }
  static int default_interval(int n) { return std::max(1, (n + 4) / 5); }

  static GateSchedule defaults(int n) {
    GateSchedule s;
    s.n = n;
    s.m = default_gate_step(n);
    s.k = default_interval(n);
    s.warmup = std::min(2, s.m);
    return s;
  }

  // Baseline: nothing is cached, nothing is reused.
  static GateSchedule disabled(int n) {
    GateSchedule s = defaults(n);
    s.m = n;
    s.sa_caching = false;
    s.ca_caching = false;
    return s;
  }

  bool collapses() const { return ca_caching && collapse_cfg; }

  void validate() const {
    if (n < 1) throw ConfigError("schedule: n must be >= 1");
    if (m < 0 || m > n) throw ConfigError("schedule: gate step must lie in [0, n]");
    if (k < 1 || k > n) throw ConfigError("schedule: interval must lie in [1, n]");
    if (warmup < 0 || warmup > m) throw ConfigError("schedule: warm-up must lie in [0, m]");
    if (ca_caching && m < 1)
      throw ConfigError("schedule: gate step 0 leaves the cross-attention cache empty");
  }

  bool operator==(const GateSchedule&) const = default;
};

enum class Action { compute, compute_and_record, reuse };

inline const char* to_string(Action a) {
  switch (a) {
    case Action::compute: return "compute";
    case Action::compute_and_record: return "compute_and_record";
    case Action::reuse: return "reuse";
  }
  return "?";
}

/// What a sublayer of the given kind does at 1-based step j.
///
/// Cross-attention: computed before the gate step, recorded at it, replayed
/// from the cache after it. Self-attention (semantics phase): computed during
/// warm-up, then refreshed on steps where (j − warmup − 1) is a multiple of k
/// and replayed in between, up to and including m; always computed after m.
/// The fidelity-phase variant mirrors this after m with (j − m − 1).
inline Action decide(int j, AttnKind kind, const GateSchedule& s) {
  if (j < 1 || j > s.n)
    throw ConfigError("decide: step " + std::to_string(j) + " outside [1, n]");
  if (kind == AttnKind::cross_attn) {
    if (!s.ca_caching || j < s.m) return Action::compute;
    return j == s.m ? Action::compute_and_record : Action::reuse;
  }
  if (!s.sa_caching) return Action::compute;
  if (s.sa_phase == SelfCachePhase::semantics) {
    if (j <= s.warmup || j > s.m) return Action::compute;
    return (j - s.warmup - 1) % s.k == 0 ? Action::compute_and_record : Action::reuse;
  }
  if (j <= s.m) return Action::compute;
  return (j - s.m - 1) % s.k == 0 ? Action::compute_and_record : Action::reuse;
}

/// FIFO of per-sublayer attention outputs in traversal order.
class FeatureCache {
 public:
  explicit FeatureCache(AttnKind kind = AttnKind::cross_attn) : kind_(kind) {}

  AttnKind kind() const { return kind_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t write_cursor() const { return entries_.size(); }
  std::size_t read_cursor() const { return read_; }
  const std::vector<Tensor>& entries() const { return entries_; }

  void clear() {
    entries_.clear();
    read_ = 0;
  }
  void rewind() { read_ = 0; }
  void write(Tensor t) { entries_.push_back(std::move(t)); }

  const Tensor& read() {
    if (read_ >= entries_.size())
      throw InvariantError(std::string(to_string(kind_)) +
                           "-attention cache read past its " + std::to_string(entries_.size()) +
                           " entries (cache not populated)");
    return entries_[read_++];
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : entries_) h = (h ^ tgate::checksum(e)) * 0x100000001b3ULL;
    return h;
  }

 private:
  AttnKind kind_;
  std::vector<Tensor> entries_;
  std::size_t read_ = 0;
};

/// Cross-attention cache from the gate step's two CFG branches.
inline FeatureCache build_cross_cache(const std::vector<Tensor>& maps_cond,
                                      const std::vector<Tensor>& maps_uncond, AnchorMode anchor) {
  if (maps_cond.size() != maps_uncond.size())
    throw ShapeError("build_cross_cache: branch lists differ in length (" +
                     std::to_string(maps_cond.size()) + " vs " +
                     std::to_string(maps_uncond.size()) + ")");
  FeatureCache cache(AttnKind::cross_attn);
  for (std::size_t i = 0; i < maps_cond.size(); ++i) {
    const Tensor& c = maps_cond[i];
    const Tensor& u = maps_uncond[i];
    require_same_shape(c, u, "build_cross_cache");
    switch (anchor) {
      case AnchorMode::conditional: cache.write(c); break;
      case AnchorMode::unconditional: cache.write(u); break;
      case AnchorMode::average: {
        Tensor avg(c.shape());
        for (std::size_t e = 0; e < avg.numel(); ++e) avg[e] = 0.5f * (u[e] + c[e]);
        cache.write(std::move(avg));
        break;
      }
    }
  }
  return cache;
}

/// Per-trajectory cache state. Self caches are kept per CFG branch
/// (index 0 conditional, 1 unconditional); the cross cache is shared.
struct GateCaches {
  FeatureCache cross{AttnKind::cross_attn};
  std::array<FeatureCache, 2> self{FeatureCache(AttnKind::self_attn),
                                   FeatureCache(AttnKind::self_attn)};
};

/// Optional observations from one gated step.
struct StepTrace {
  bool keep_maps = false;
  int branches = 0;
  // Pre-projection cross-attention maps per branch, one per computed sublayer.
  std::array<std::vector<Tensor>, 2> cross_maps;
  // Checksums of the tensors added to the residual stream by the first pass,
  // ordered (block 0 self, block 0 cross, block 1 self, ...).
  std::vector<std::uint64_t> applied_checksums;
  std::array<Tensor, 2> branch_eps;
};

/// Hook applying `decide` to one forward pass of one branch.
class GatingHook : public AttentionHook {
 public:
  GatingHook(const GateSchedule& schedule, int step, FeatureCache& cross, FeatureCache& self,
             std::vector<Tensor>* cross_record, std::vector<Tensor>* map_sink,
             std::vector<std::uint64_t>* checksum_sink)
      : cross_(cross),
        self_(self),
        cross_action_(decide(step, AttnKind::cross_attn, schedule)),
        self_action_(decide(step, AttnKind::self_attn, schedule)),
        cross_record_(cross_record),
        map_sink_(map_sink),
        checksum_sink_(checksum_sink) {
    cross_.rewind();
    if (self_action_ == Action::compute_and_record)
      self_.clear();
    else
      self_.rewind();
  }

  const Tensor* bypass(int, AttnKind kind) override {
    if (kind == AttnKind::cross_attn)
      return cross_action_ == Action::reuse ? &cross_.read() : nullptr;
    return self_action_ == Action::reuse ? &self_.read() : nullptr;
  }

  const Tensor* on_output(int, AttnKind kind, const Tensor& output, const Tensor& map) override {
    if (kind == AttnKind::cross_attn) {
      if (map_sink_) map_sink_->push_back(map);
      if (cross_action_ == Action::compute_and_record && cross_record_)
        cross_record_->push_back(output);
    } else if (self_action_ == Action::compute_and_record) {
      self_.write(output);
    }
    return nullptr;
  }

  void on_applied(int, AttnKind, const Tensor& applied) override {
    if (checksum_sink_) checksum_sink_->push_back(checksum(applied));
  }

 private:
  FeatureCache& cross_;
  FeatureCache& self_;
  Action cross_action_;
  Action self_action_;
  std::vector<Tensor>* cross_record_;
  std::vector<Tensor>* map_sink_;
  std::vector<std::uint64_t>* checksum_sink_;
};

/// One denoising step under the gating policy; returns the guided noise.
///
/// Up to the gate step both CFG branches run (the unconditional one only when
/// guidance is enabled) with their hooks applying `decide`, and classifier-free
/// guidance combines them. At the gate step the recorded cross-attention outputs become
/// the anchor cache. After it, with collapse enabled, a single pass with every
/// cross-attention sublayer replayed from the cache stands in for both branches:
/// the condition reaches the network only through cross-attention, so the two
/// branches would be bit-identical and CFG returns that shared value.
inline Tensor run_gated_step(const LatentState& state, const TextCondition& cond,
                             const TextCondition& uncond, const GateSchedule& schedule,
                             const Denoiser& denoiser, const GuidanceConfig& guidance,
                             GateCaches& caches, MacCounter* counter = nullptr,
                             StepTrace* trace = nullptr) {
  const int j = state.step;
  const auto blocks = static_cast<std::size_t>(denoiser.config().blocks);
  const Action cross_action = decide(j, AttnKind::cross_attn, schedule);
  if (cross_action == Action::reuse && caches.cross.size() != blocks)
    throw InvariantError("cross-attention cache not populated at step " + std::to_string(j) +
                         " (holds " + std::to_string(caches.cross.size()) + " of " +
                         std::to_string(blocks) + " entries)");

  auto maps = [&](int b) { return trace && trace->keep_maps ? &trace->cross_maps[b] : nullptr; };
  auto sums = [&](int b) { return trace && b == 0 ? &trace->applied_checksums : nullptr; };

  if (cross_action == Action::reuse && schedule.collapse_cfg) {
    GatingHook hook(schedule, j, caches.cross, caches.self[0], nullptr, maps(0), sums(0));
    Tensor eps = denoiser.predict_noise(state, uncond, &hook, counter);
    if (trace) {
      trace->branches = 1;
      trace->branch_eps[0] = eps;
    }
    return eps;
  }

  std::array<std::vector<Tensor>, 2> recorded;
  GatingHook cond_hook(schedule, j, caches.cross, caches.self[0], &recorded[0], maps(0), sums(0));
  Tensor eps_cond = denoiser.predict_noise(state, cond, &cond_hook, counter);
  if (!guidance.enabled) {
    if (cross_action == Action::compute_and_record)
      caches.cross = build_cross_cache(recorded[0], recorded[0], AnchorMode::conditional);
    if (trace) {
      trace->branches = 1;
      trace->branch_eps[0] = eps_cond;
    }
    return eps_cond;
  }

  GatingHook uncond_hook(schedule, j, caches.cross, caches.self[1], &recorded[1], maps(1),
                         sums(1));
  Tensor eps_uncond = denoiser.predict_noise(state, uncond, &uncond_hook, counter);
  if (cross_action == Action::compute_and_record)
    caches.cross = build_cross_cache(recorded[0], recorded[1], schedule.anchor);
  if (trace) {
    trace->branches = 2;
    trace->branch_eps[0] = eps_cond;
    trace->branch_eps[1] = eps_uncond;
  }
  return combine(eps_uncond, eps_cond, guidance.scale);
}

}  // namespace tgate
