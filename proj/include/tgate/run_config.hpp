#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tgate/analysis.hpp"
#include "tgate/denoiser.hpp"
#include "tgate/gating.hpp"
#include "tgate/guidance.hpp"
#include "tgate/pipeline.hpp"
#include "tgate/scheduler.hpp"

namespace tgate {

/// Everything that determines a run. Serialized as flat `key = value` text
/// grouped under `[section]` headers; `#` and `;` start comment lines.
///
///   [denoiser] latent_side channels patch width heads blocks mlp_ratio
///              text_len text_dim seed
///   [sampler]  scheduler steps
///   [guidance] cfg_scale enabled
///   [gate]     gate_step sa_interval warmup anchor collapse ca_cache sa_cache
///   [run]      prompt (repeatable) seeds mode timing
///   [ablate]   modes m_values k_values
///   [scale]    resolutions token_factors
///
/// gate_step, sa_interval and warmup accept `auto` (3n/5, n/5 and 2, rounded up
/// and clamped to the schedule's bounds).
struct RunConfig {
  DenoiserConfig denoiser;
  SamplerKind sampler = SamplerKind::dpm2m;
  int steps = 25;
  GuidanceConfig guidance;

  std::optional<int> gate_step;
  std::optional<int> sa_interval;
  std::optional<int> warmup;
  AnchorMode anchor = AnchorMode::average;
  bool collapse_cfg = true;
  bool ca_cache = true;
  bool sa_cache = true;

  std::vector<std::string> prompts;
  std::vector<std::uint64_t> seeds{7};
  ModeTag mode = ModeTag::TGATE;
  bool timing = false;

  std::vector<ModeTag> ablate_modes{ModeTag::S_F, ModeTag::S_L};
  std::vector<int> ablate_m{3, 5, 10};
  std::vector<int> ablate_k{3, 5};

  std::vector<int> scale_resolutions{8, 16, 32};
  std::vector<int> scale_token_factors{1, 4, 16};

  GateSchedule schedule() const {
    GateSchedule s;
    s.n = steps;
    s.m = gate_step.value_or(GateSchedule::default_gate_step(steps));
    s.k = sa_interval.value_or(GateSchedule::default_interval(steps));
    s.warmup = warmup.value_or(std::min(2, s.m));
    s.anchor = anchor;
    s.collapse_cfg = collapse_cfg;
    s.ca_caching = ca_cache;
    s.sa_caching = sa_cache;
    return s;
  }

  RunSettings settings() const {
    RunSettings r;
    r.sampler = sampler;
    r.steps = steps;
    r.guidance = guidance;
    r.schedule = schedule();
    r.timing = timing;
    return r;
  }

  TrajectoryMode trajectory_mode() const {
    const GateSchedule s = schedule();
    return {mode, s.m, s.k, s.warmup};
  }

  void validate() const {
    denoiser.validate();
    guidance.validate();
    if (steps < 1 || steps > 1000) throw ConfigError("steps must lie in [1, 1000]");
    schedule().validate();
  }

  bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  v = trim(v);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("invalid value '" + std::string(v) + "' for " + std::string(key));
  return out;
}

inline double parse_real(std::string_view key, std::string_view v) {
  const std::string s(trim(v));
  try {
    std::size_t used = 0;
    const double d = std::stod(s, &used);
    if (used != s.size()) throw ConfigError("");
    return d;
  } catch (...) {
    throw ConfigError("invalid value '" + s + "' for " + std::string(key));
  }
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean '" + std::string(v) + "' for " + std::string(key));
}

inline std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const auto item = trim(v.substr(0, comma));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
std::vector<T> parse_number_list(std::string_view key, std::string_view v) {
  std::vector<T> out;
  for (auto item : split_list(v)) out.push_back(parse_number<T>(key, item));
  return out;
}

inline std::optional<int> parse_auto_int(std::string_view key, std::string_view v) {
  if (trim(v) == "auto") return std::nullopt;
  return parse_number<int>(key, v);
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

}  // namespace detail

/// Applies one `section.key = value` assignment. Repeated `run.prompt` keys append.
inline void apply_config_value(RunConfig& c, std::string_view section, std::string_view key,
                               std::string_view value) {
  using namespace detail;
  const std::string full = std::string(section) + "." + std::string(key);
  auto is = [&](const char* name) { return full == name; };
  if (is("denoiser.latent_side")) c.denoiser.latent_side = parse_number<int>(full, value);
  else if (is("denoiser.channels")) c.denoiser.channels = parse_number<int>(full, value);
  else if (is("denoiser.patch")) c.denoiser.patch = parse_number<int>(full, value);
  else if (is("denoiser.width")) c.denoiser.width = parse_number<int>(full, value);
  else if (is("denoiser.heads")) c.denoiser.heads = parse_number<int>(full, value);
  else if (is("denoiser.blocks")) c.denoiser.blocks = parse_number<int>(full, value);
  else if (is("denoiser.mlp_ratio")) c.denoiser.mlp_ratio = parse_number<int>(full, value);
  else if (is("denoiser.text_len")) c.denoiser.text_len = parse_number<int>(full, value);
  else if (is("denoiser.text_dim")) c.denoiser.text_dim = parse_number<int>(full, value);
  else if (is("denoiser.seed")) c.denoiser.seed = parse_number<std::uint64_t>(full, value);
  else if (is("sampler.scheduler")) c.sampler = parse_sampler(trim(value));
  else if (is("sampler.steps")) c.steps = parse_number<int>(full, value);
  else if (is("guidance.cfg_scale")) c.guidance.scale = parse_real(full, value);
  else if (is("guidance.enabled")) c.guidance.enabled = parse_bool(full, value);
  else if (is("gate.gate_step")) c.gate_step = parse_auto_int(full, value);
  else if (is("gate.sa_interval")) c.sa_interval = parse_auto_int(full, value);
  else if (is("gate.warmup")) c.warmup = parse_auto_int(full, value);
  else if (is("gate.anchor")) c.anchor = parse_anchor(trim(value));
  else if (is("gate.collapse")) c.collapse_cfg = parse_bool(full, value);
  else if (is("gate.ca_cache")) c.ca_cache = parse_bool(full, value);
  else if (is("gate.sa_cache")) c.sa_cache = parse_bool(full, value);
  else if (is("run.prompt")) c.prompts.emplace_back(trim(value));
  else if (is("run.seeds")) c.seeds = parse_number_list<std::uint64_t>(full, value);
  else if (is("run.mode")) c.mode = parse_mode(trim(value));
  else if (is("run.timing")) c.timing = parse_bool(full, value);
  else if (is("ablate.modes")) {
    c.ablate_modes.clear();
    for (auto m : split_list(value)) c.ablate_modes.push_back(parse_mode(m));
  } else if (is("ablate.m_values")) c.ablate_m = parse_number_list<int>(full, value);
  else if (is("ablate.k_values")) c.ablate_k = parse_number_list<int>(full, value);
  else if (is("scale.resolutions")) c.scale_resolutions = parse_number_list<int>(full, value);
  else if (is("scale.token_factors")) c.scale_token_factors = parse_number_list<int>(full, value);
  else throw ConfigError("unknown config key '" + full + "'");
}

inline RunConfig parse_run_config(std::string_view text, RunConfig base = {}) {
  bool prompts_reset = false;
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto line = detail::trim(text.substr(0, nl));
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
      section = std::string(detail::trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    if (section == "run" && key == "prompt" && !prompts_reset) {
      base.prompts.clear();
      prompts_reset = true;
    }
    apply_config_value(base, section, key, line.substr(eq + 1));
  }
  return base;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::move(base));
}

inline std::string serialize_run_config(const RunConfig& c) {
  using detail::join;
  auto opt = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string("auto"); };
  auto flag = [](bool b) { return b ? "true" : "false"; };
  std::vector<std::string> modes;
  for (auto m : c.ablate_modes) modes.emplace_back(to_string(m));
  std::ostringstream os;
  os << "[denoiser]\n"
     << "latent_side = " << c.denoiser.latent_side << '\n'
     << "channels = " << c.denoiser.channels << '\n'
     << "patch = " << c.denoiser.patch << '\n'
     << "width = " << c.denoiser.width << '\n'
     << "heads = " << c.denoiser.heads << '\n'
     << "blocks = " << c.denoiser.blocks << '\n'
     << "mlp_ratio = " << c.denoiser.mlp_ratio << '\n'
     << "text_len = " << c.denoiser.text_len << '\n'
     << "text_dim = " << c.denoiser.text_dim << '\n'
     << "seed = " << c.denoiser.seed << "\n\n"
     << "[sampler]\n"
     << "scheduler = " << to_string(c.sampler) << '\n'
     << "steps = " << c.steps << "\n\n"
     << "[guidance]\n"
     << "cfg_scale = " << format_double(c.guidance.scale) << '\n'
     << "enabled = " << flag(c.guidance.enabled) << "\n\n"
     << "[gate]\n"
     << "gate_step = " << opt(c.gate_step) << '\n'
     << "sa_interval = " << opt(c.sa_interval) << '\n'
     << "warmup = " << opt(c.warmup) << '\n'
     << "anchor = " << to_string(c.anchor) << '\n'
     << "collapse = " << flag(c.collapse_cfg) << '\n'
     << "ca_cache = " << flag(c.ca_cache) << '\n'
     << "sa_cache = " << flag(c.sa_cache) << "\n\n"
     << "[run]\n";
  for (const auto& p : c.prompts) os << "prompt = " << p << '\n';
  os << "seeds = " << join(c.seeds) << '\n'
     << "mode = " << to_string(c.mode) << '\n'
     << "timing = " << flag(c.timing) << "\n\n"
     << "[ablate]\n"
     << "modes = " << join(modes) << '\n'
     << "m_values = " << join(c.ablate_m) << '\n'
     << "k_values = " << join(c.ablate_k) << "\n\n"
     << "[scale]\n"
     << "resolutions = " << join(c.scale_resolutions) << '\n'
     << "token_factors = " << join(c.scale_token_factors) << '\n';
  return os.str();
}

}  // namespace tgate
