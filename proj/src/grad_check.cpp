#include "gtf/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace gtf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double eval_scalar(const std::function<Tensor()>& fn) {
  Tensor out = fn();  // no tape active: forward only
  if (out.numel() != 1) throw ShapeError("grad_check: scalar-valued function required");
  return out.values()[0];
}

}  // namespace

double grad_check_leaves(const std::function<Tensor()>& fn,
                         const std::vector<Tensor>& leaves, double step,
                         int max_coords_per_leaf, std::uint64_t seed) {
  for (Tensor leaf : leaves) leaf.zero_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor out = fn();
    if (out.numel() != 1) throw ShapeError("grad_check: scalar-valued function required");
    if (!std::isfinite(out.values()[0])) return kInf;
    tape.backward(out, Tensor::scalar(1.0));
  }

  std::mt19937_64 rng(seed);
  double max_err = 0.0;
  for (Tensor leaf : leaves) {
    if (!leaf.requires_grad()) continue;
    std::vector<Index> coords(static_cast<std::size_t>(leaf.numel()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (max_coords_per_leaf > 0 &&
        static_cast<Index>(max_coords_per_leaf) < leaf.numel()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(max_coords_per_leaf));
    }
    const Vec analytic =
        leaf.has_grad() ? leaf.grad() : Vec(Vec::Zero(leaf.numel()));
    for (Index c : coords) {
      const double original = leaf.values()[c];
      leaf.values_mut()[c] = original + step;
      const double f_plus = eval_scalar(fn);
      leaf.values_mut()[c] = original - step;
      const double f_minus = eval_scalar(fn);
      leaf.values_mut()[c] = original;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) return kInf;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a = analytic[c];
      if (!std::isfinite(a) || !std::isfinite(numeric)) return kInf;
      const double err =
          std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

double grad_check(const std::function<Tensor(const Tensor&)>& fn, Tensor input,
                  double step) {
  return grad_check_leaves([&]() { return fn(input); }, {input}, step);
}

}  // namespace gtf
