#pragma once

#include <functional>
#include <vector>

#include "ramreid/rng.hpp"
#include "ramreid/tensor.hpp"

namespace ramreid::testing {

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckResult {
  // Largest over inputs of |analytic - numeric| / max(|analytic|, |numeric|),
  // with vector 2-norms.
  double max_relative_error = 0.0;
  std::size_t evaluations = 0;
};

// Compares the backward pass of f against central differences with step h.
// The scalar probed is sum(R * f(inputs)) for a fixed random R, so every
// output element contributes.
GradCheckResult gradcheck(const TensorFn& f, const std::vector<Tensor>& inputs, Rng& rng,
                          double h = 1e-5);

// Random tensor with entries uniform in [lo, hi).
Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0);

// Entries in [-1, 1] that are pairwise at least `gap` apart and at least
// gap/2 away from zero, in random order.
Tensor spread_tensor(Rng& rng, Shape shape, double gap = 1e-3);

}  // namespace ramreid::testing
