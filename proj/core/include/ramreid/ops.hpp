#pragma once

#include <cstddef>
#include <span>

#include "ramreid/tensor.hpp"

namespace ramreid {

// Elementwise ops. `b` must have the same shape as `a` or equal a's trailing
// dimensions, in which case it is broadcast over a's leading dimensions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);

// 2-D matrix product: (m x k) * (k x n) -> (m x n).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor relu(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);

// Contiguous range [begin, end) along one axis. Backward scatters the
// incoming gradient into exactly the mapped elements of `a`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

// Gathers rows (axis 0) by index; repeated indices accumulate in backward.
Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows);

Tensor zeros_like(const Tensor& a);
Tensor identity(std::size_t n);

}  // namespace ramreid
