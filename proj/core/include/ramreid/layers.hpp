#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "ramreid/rng.hpp"
#include "ramreid/tensor.hpp"

namespace ramreid {

// floor((in + 2*padding - kernel) / stride) + 1; throws when the result
// would be smaller than 1.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding);

// Cross-correlation over NCHW input. weight: (out_ch, in_ch, kh, kw);
// bias: (out_ch) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

// Max over kernel x kernel windows. Backward routes each window's gradient
// to its maximum; ties go to the first element in row-major window order.
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

// Affine map x * weight^T + bias with x: (N, in), weight: (out, in).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Per-channel batch normalization over (N, C) or (N, C, H, W) input.
//
// Training mode normalizes with the biased batch variance and folds the batch
// statistics into the running buffers:
//   running = momentum * running + (1 - momentum) * batch
// using the unbiased variance for running_var. Inference mode is the fixed
// affine map given by the running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, double momentum, double epsilon, bool training);

// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Kaiming-uniform init: U(-b, b), b = sqrt(6 / fan_in).
Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng);

struct ConvLayer {
  Tensor weight;  // (out_ch, in_ch, kh, kw)
  Tensor bias;    // (out_ch)
  std::size_t stride = 1;
  std::size_t padding = 0;

  static ConvLayer create(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                          std::size_t stride, std::size_t padding, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

struct FcLayer {
  Tensor weight;  // (out, in)
  Tensor bias;    // (out)

  static FcLayer create(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  Tensor forward(const Tensor& x) const;
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  static BatchNormLayer create(std::size_t channels, double momentum, double epsilon);
  Tensor forward(const Tensor& x, bool training);
};

}  // namespace ramreid
