#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcgkt/model.hpp"

namespace mcgkt {

// Central finite differences with h = 1e-3 as the primary step; forward
// passes run in float32 and the check functional accumulates in float64. The
// normalized error |analytic - fd| / max(|analytic|, |fd|, 1e-2) folds the
// tolerances together: < 1e-3 means relative error < 1e-3, or absolute
// < 1e-5 near zero. Entries that miss at the primary step are re-measured at
// neighbouring steps and keep their best value: float32 quantization noise
// shrinks with larger h and a ReLU kink inside the bracket clears once
// h < |preactivation|, while a genuine backward bug fails at every step.
constexpr double kGradTolerance = 1e-3;

struct OpGradCheck {
  std::string op;
  double worst_err = 0.0;
  int instances = 0;
  bool pass() const { return worst_err < kGradTolerance; }
};

// Runs every differentiable operation and composite layer on randomized
// instances (dims <= 6).
std::vector<OpGradCheck> gradcheck_ops(int instances_per_op, std::uint64_t seed);

// End-to-end check of a tiny model (MSE loss against a fixed target) on
// `sampled_params` randomly chosen parameter entries.
OpGradCheck gradcheck_model(const ModelConfig& config, int sampled_params, std::uint64_t seed);

}  // namespace mcgkt
