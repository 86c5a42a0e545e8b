#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "ramreid/tensor.hpp"

namespace ramreid {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct SgdState {
  double learning_rate = 0.001;
  double decay_factor = 0.1;
  int decay_epoch_period = 10;
  // 0 gives plain SGD.
  double momentum = 0.0;

  void validate() const;
};

// base * decay^floor(epoch / period), applied as repeated multiplication.
double learning_rate_at(const SgdState& state, int epoch);

// p <- p - lr(epoch) * g (with optional heavy-ball momentum), then g <- 0.
// Every parameter must carry a gradient buffer.
class Sgd {
 public:
  explicit Sgd(SgdState state);

  const SgdState& state() const { return state_; }
  void step(std::span<const NamedTensor> params, int epoch);

 private:
  SgdState state_;
  std::map<std::string, std::vector<double>> velocity_;
};

}  // namespace ramreid
