#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gtf/tensor.hpp"

namespace gtf {

/// Compares the analytic gradient of a scalar-valued function against central
/// finite differences. Returns the max over probed elements of
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
/// A non-finite output or difference quotient is reported as infinity.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, Tensor input,
                  double step = 1e-5);

/// Same check for a closure over several leaves. Probes at most
/// `max_coords_per_leaf` coordinates per leaf (all of them when <= 0),
/// sampled deterministically from `seed`.
double grad_check_leaves(const std::function<Tensor()>& fn,
                         const std::vector<Tensor>& leaves, double step = 1e-5,
                         int max_coords_per_leaf = 0, std::uint64_t seed = 0);

}  // namespace gtf
