#pragma once

#include <cmath>

#include "dsd/errors.hpp"
#include "dsd/rng.hpp"

namespace dsd {

/// Variance-exploding noise levels sigma_t = sigma_min * (sigma_max / sigma_min)^t
/// for t ~ Unif(0, 1). sigma_min == sigma_max gives a constant schedule.
struct NoiseSchedule {
  double sigma_min = 0.02;
  double sigma_max = 5.0;

  void validate() const {
    if (!(sigma_min > 0.0) || !(sigma_max >= sigma_min) || !std::isfinite(sigma_max)) {
      throw PreconditionError("NoiseSchedule: need 0 < sigma_min <= sigma_max < inf");
    }
  }

  double sigma(double t) const {
    if (sigma_max == sigma_min) return sigma_min;
    return sigma_min * std::pow(sigma_max / sigma_min, t);
  }

  double sample_sigma(Rng& rng) const { return sigma(rng.uniform()); }

  bool constant() const { return sigma_max == sigma_min; }
};

}  // namespace dsd
