#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pillarnest/tensor.hpp"

namespace pillarnest {

struct GradCheckResult {
  bool ok = true;
  int checked = 0;
  int failed = 0;
  float worst_rel = 0.0f;
  std::string worst_detail;
};

struct GradCheckOptions {
  float h = 1e-3f;        // central-difference step
  float rtol = 1e-3f;
  float atol = 1e-5f;     // absolute slack for near-zero derivatives
  int max_entries = 0;    // 0 = check every element, else sample this many
  uint64_t sample_seed = 0;
};

// Central finite differences against reverse-mode grads. `loss_builder`
// rebuilds the scalar loss from the parameters' current data on every call;
// grad_check runs it once under the tape for the analytic grads, then twice
// per perturbed element with gradients disabled. Elements are restored.
GradCheckResult grad_check(const std::function<Tensor()>& loss_builder,
                           const std::vector<Parameter>& params,
                           const GradCheckOptions& opts = {});

}  // namespace pillarnest
