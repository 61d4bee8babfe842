#include "gtf/adagrad.hpp"

#include <cmath>
#include <iostream>

namespace gtf {

void adagrad_step(const std::vector<Tensor>& params, AdagradState& state) {
  for (Tensor p : params) {
    if (!p.has_grad()) continue;
    const Vec& g = p.grad();
    if (!g.allFinite()) {
      ++state.rejected_steps;
      std::cerr << "adagrad: non-finite gradient for tensor " << p.id()
                << ", step rejected\n";
      continue;
    }
    auto [it, inserted] = state.accumulators.try_emplace(p.id(), Vec::Zero(p.numel()));
    Vec& acc = it->second;
    acc.array() += g.array().square();
    p.values_mut().array() -=
        state.lr * g.array() / (acc.array().sqrt() + state.epsilon);
  }
}

void zero_grads(const std::vector<Tensor>& params) {
  for (Tensor p : params) p.zero_grad();
}

}  // namespace gtf
