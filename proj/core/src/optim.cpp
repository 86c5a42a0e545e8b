#include "ramreid/optim.hpp"

#include <cmath>

#include "ramreid/error.hpp"

namespace ramreid {

void SgdState::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ValueError("learning rate must be finite and non-negative");
  }
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ValueError("decay factor must lie in (0, 1]");
  if (decay_epoch_period <= 0) throw ValueError("decay period must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValueError("momentum must lie in [0, 1)");
}

double learning_rate_at(const SgdState& state, int epoch) {
  if (epoch < 0) throw ValueError("negative epoch");
  // One multiplication per completed period, so the value after each drop is
  // exactly what a running "lr *= decay" schedule would hold.
  double lr = state.learning_rate;
  for (int drops = epoch / state.decay_epoch_period; drops > 0; --drops) lr *= state.decay_factor;
  return lr;
}

Sgd::Sgd(SgdState state) : state_(state) { state_.validate(); }

void Sgd::step(std::span<const NamedTensor> params, int epoch) {
  for (const NamedTensor& p : params) {
    if (!p.tensor.has_grad()) throw StateError("parameter " + p.name + " has no gradient");
  }
  const double lr = learning_rate_at(state_, epoch);
  for (const NamedTensor& p : params) {
    Tensor t = p.tensor;
    auto values = t.mutable_data();
    auto grad = t.mutable_grad();
    if (state_.momentum > 0.0) {
      auto& v = velocity_[p.name];
      if (v.size() != values.size()) v.assign(values.size(), 0.0);
      for (std::size_t i = 0; i < values.size(); ++i) {
        v[i] = state_.momentum * v[i] + grad[i];
        values[i] -= lr * v[i];
      }
    } else {
      for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grad[i];
    }
    std::fill(grad.begin(), grad.end(), 0.0);
  }
}

}  // namespace ramreid
