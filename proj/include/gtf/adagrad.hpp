#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "gtf/tensor.hpp"

namespace gtf {

/// Per-parameter squared-gradient accumulators, keyed by tensor identity.
/// Accumulators are elementwise non-decreasing across steps.
struct AdagradState {
  Scalar lr = 0.1;
  Scalar epsilon = 1e-10;
  std::unordered_map<std::uint64_t, Vec> accumulators;
  std::uint64_t rejected_steps = 0;  // parameters skipped on non-finite gradients
};

/// accumulator += grad^2; param -= lr * grad / (sqrt(accumulator) + epsilon).
/// Parameters without an allocated gradient buffer are left untouched. A
/// parameter whose gradient contains non-finite values keeps its value and
/// accumulator; the event is counted and logged.
void adagrad_step(const std::vector<Tensor>& params, AdagradState& state);

void zero_grads(const std::vector<Tensor>& params);

}  // namespace gtf
