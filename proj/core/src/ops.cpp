#include "ramreid/ops.hpp"

#include <algorithm>

#include "ramreid/error.hpp"

namespace ramreid {

namespace {

// Number of times b repeats inside a; throws unless b's shape is a suffix of a's.
std::size_t broadcast_repeats(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sb.size() <= sa.size() && std::equal(sb.begin(), sb.end(), sa.end() - sb.size());
  if (!ok) {
    throw ShapeError(std::string(op) + ": shapes " + shape_to_string(sa) + " and " +
                     shape_to_string(sb) + " are not broadcast-compatible");
  }
  return a.numel() / b.numel();
}

enum class Binary { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  const std::size_t repeats = broadcast_repeats(a, b, name);
  const std::size_t inner = b.numel();
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < repeats; ++r) {
    const std::size_t base = r * inner;
    for (std::size_t i = 0; i < inner; ++i) {
      const double x = da[base + i];
      const double y = db[i];
      switch (kind) {
        case Binary::kAdd: out[base + i] = x + y; break;
        case Binary::kSub: out[base + i] = x - y; break;
        case Binary::kMul: out[base + i] = x * y; break;
      }
    }
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, name,
                             [a, b, kind, repeats, inner](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = a.grad_accumulator();
      auto db = b.data();
      for (std::size_t r = 0; r < repeats; ++r) {
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t k = r * inner + i;
          ga[k] += kind == Binary::kMul ? g[k] * db[i] : g[k];
        }
      }
    }
    if (b.requires_grad()) {
      auto gb = b.grad_accumulator();
      auto da = a.data();
      for (std::size_t r = 0; r < repeats; ++r) {
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t k = r * inner + i;
          switch (kind) {
            case Binary::kAdd: gb[i] += g[k]; break;
            case Binary::kSub: gb[i] -= g[k]; break;
            case Binary::kMul: gb[i] += g[k] * da[k]; break;
          }
        }
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kMul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  auto da = a.data();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = da[i] * factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, "scale",
                             [a, factor](std::span<const double> g) {
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()) + " do not conform");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = da[i * k + p];
      const double* brow = db.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return Tensor::make_result({m, n}, std::move(out), {a, b}, "matmul",
                             [a, b, m, k, n](std::span<const double> g) {
    if (a.requires_grad()) {
      // dA = G * B^T
      auto ga = a.grad_accumulator();
      auto db = b.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * db[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      // dB = A^T * G
      auto gb = b.grad_accumulator();
      auto da = a.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = da[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return Tensor::make_result({}, {total}, {a}, "sum", [a](std::span<const double> g) {
    auto ga = a.grad_accumulator();
    for (double& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor relu(const Tensor& a) {
  auto da = a.data();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = da[i] > 0.0 ? da[i] : 0.0;
  return Tensor::make_result(a.shape(), std::move(out), {a}, "relu", [a](std::span<const double> g) {
    auto ga = a.grad_accumulator();
    auto da = a.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (da[i] > 0.0) ga[i] += g[i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                     shape_to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, "reshape",
                             [a](std::span<const double> g) {
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for shape " + shape_to_string(s));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t full = s[axis] * inner;
  const std::size_t len = (end - begin) * inner;
  const std::size_t offset = begin * inner;

  auto da = a.data();
  std::vector<double> out(outer * len);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(da.begin() + o * full + offset, len, out.begin() + o * len);
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  return Tensor::make_result(std::move(out_shape), std::move(out), {a}, "slice",
                             [a, outer, full, len, offset](std::span<const double> g) {
    auto ga = a.grad_accumulator();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < len; ++i) ga[o * full + offset + i] += g[o * len + i];
    }
  });
}

Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.rank() < 1) throw ShapeError("select_rows: scalar input");
  if (rows.empty()) throw ShapeError("select_rows: empty index list");
  const std::size_t n = a.dim(0);
  const std::size_t inner = a.numel() / n;
  std::vector<std::size_t> index(rows.begin(), rows.end());
  for (std::size_t r : index) {
    if (r >= n) {
      throw ShapeError("select_rows: row " + std::to_string(r) + " out of range for shape " +
                       shape_to_string(a.shape()));
    }
  }
  auto da = a.data();
  std::vector<double> out(index.size() * inner);
  for (std::size_t i = 0; i < index.size(); ++i) {
    std::copy_n(da.begin() + index[i] * inner, inner, out.begin() + i * inner);
  }
  Shape out_shape = a.shape();
  out_shape[0] = index.size();
  return Tensor::make_result(std::move(out_shape), std::move(out), {a}, "select_rows",
                             [a, index, inner](std::span<const double> g) {
    auto ga = a.grad_accumulator();
    for (std::size_t i = 0; i < index.size(); ++i) {
      for (std::size_t j = 0; j < inner; ++j) ga[index[i] * inner + j] += g[i * inner + j];
    }
  });
}

Tensor zeros_like(const Tensor& a) { return Tensor::zeros(a.shape()); }

Tensor identity(std::size_t n) {
  Tensor t = Tensor::zeros({n, n});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return t;
}

}  // namespace ramreid
