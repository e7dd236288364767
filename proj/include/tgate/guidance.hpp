#pragma once

#include <cmath>

#include "tgate/tensor.hpp"

namespace tgate {

struct GuidanceConfig {
  double scale = 7.5;
  bool enabled = true;

  void validate() const {
    if (!std::isfinite(scale) || scale < 0.0) throw ConfigError("guidance scale must be finite and >= 0");
  }
  bool operator==(const GuidanceConfig&) const = default;
};

/// Classifier-free guidance: ε_∅ + w·(ε_c − ε_∅), per element.
///
/// The difference and the update are formed in double and rounded once, which
/// makes w = 1 return ε_c exactly. Where the branches agree the unconditional
/// value is passed through untouched, so identical branches combine to
/// themselves bitwise for every w.
inline Tensor combine(const Tensor& eps_uncond, const Tensor& eps_cond, double w) {
  require_same_shape(eps_uncond, eps_cond, "cfg combine");
  Tensor out(eps_uncond.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double u = eps_uncond[i];
    const double d = static_cast<double>(eps_cond[i]) - u;
    out[i] = (d == 0.0 || w == 0.0) ? eps_uncond[i] : static_cast<float>(u + w * d);
  }
  return out;
}

}  // namespace tgate
