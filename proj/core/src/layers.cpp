#include "ramreid/layers.hpp"

#include <algorithm>
#include <cmath>

#include "ramreid/error.hpp"

namespace ramreid {

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding) {
  if (stride == 0) throw ValueError("stride must be positive");
  if (kernel == 0 || kernel > in + 2 * padding) {
    throw ShapeError("window of " + std::to_string(kernel) + " does not fit input of " +
                     std::to_string(in) + " with padding " + std::to_string(padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo, stride, pad;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t positions() const { return ho * wo; }
};

// Unfolds one image (cin, h, w) into a (cin*kh*kw, ho*wo) matrix.
void im2col(const ConvGeometry& g, const double* image, double* col) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] = inside ? image[(c * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters a column matrix back onto the image gradient.
void col2im(const ConvGeometry& g, const double* col, double* image) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            image[(c * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

std::size_t channel_count_for_norm(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError("batch_norm expects (N, C) or (N, C, H, W), got " + shape_to_string(x.shape()));
  }
  return x.dim(1);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw ShapeError("conv2d expects NCHW input and 4-D weight, got " + shape_to_string(x.shape()) +
                     " and " + shape_to_string(weight.shape()));
  }
  if (x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input " + shape_to_string(x.shape()) + " vs weight " +
                     shape_to_string(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    throw ShapeError("conv2d bias " + shape_to_string(bias.shape()) + " does not match weight " +
                     shape_to_string(weight.shape()));
  }
  ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  g.ho = conv_output_size(g.h, g.kh, stride, padding);
  g.wo = conv_output_size(g.w, g.kw, stride, padding);

  const std::size_t kdim = g.patch();
  const std::size_t p = g.positions();
  auto dx = x.data();
  auto dw = weight.data();
  std::vector<double> out(g.n * g.cout * p, 0.0);
  std::vector<double> col(kdim * p);
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(g, dx.data() + n * g.cin * g.h * g.w, col.data());
    double* o = out.data() + n * g.cout * p;
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* orow = o + co * p;
      if (bias.defined()) std::fill_n(orow, p, bias.data()[co]);
      for (std::size_t k = 0; k < kdim; ++k) {
        const double wv = dw[co * kdim + k];
        const double* crow = col.data() + k * p;
        for (std::size_t j = 0; j < p; ++j) orow[j] += wv * crow[j];
      }
    }
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result({g.n, g.cout, g.ho, g.wo}, std::move(out), std::move(inputs), "conv2d",
                             [x, weight, bias, g](std::span<const double> grad) {
    const std::size_t kdim = g.patch();
    const std::size_t p = g.positions();
    auto dx = x.data();
    auto dw = weight.data();
    std::vector<double> col(kdim * p);
    std::vector<double> dcol(kdim * p);
    for (std::size_t n = 0; n < g.n; ++n) {
      const double* gn = grad.data() + n * g.cout * p;
      if (weight.requires_grad()) {
        auto gw = weight.grad_accumulator();
        im2col(g, dx.data() + n * g.cin * g.h * g.w, col.data());
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* grow = gn + co * p;
          for (std::size_t k = 0; k < kdim; ++k) {
            const double* crow = col.data() + k * p;
            double acc = 0.0;
            for (std::size_t j = 0; j < p; ++j) acc += grow[j] * crow[j];
            gw[co * kdim + k] += acc;
          }
        }
      }
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.grad_accumulator();
        for (std::size_t co = 0; co < g.cout; ++co) {
          double acc = 0.0;
          for (std::size_t j = 0; j < p; ++j) acc += gn[co * p + j];
          gb[co] += acc;
        }
      }
      if (x.requires_grad()) {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* grow = gn + co * p;
          for (std::size_t k = 0; k < kdim; ++k) {
            const double wv = dw[co * kdim + k];
            double* drow = dcol.data() + k * p;
            for (std::size_t j = 0; j < p; ++j) drow[j] += wv * grow[j];
          }
        }
        auto gx = x.grad_accumulator();
        col2im(g, dcol.data(), gx.data() + n * g.cin * g.h * g.w);
      }
    }
  });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 4) throw ShapeError("max_pool2d expects NCHW input, got " + shape_to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = conv_output_size(h, kernel, stride, 0);
  const std::size_t wo = conv_output_size(w, kernel, stride, 0);
  auto dx = x.data();
  std::vector<double> out(n * c * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = dx.data() + plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx = (oy * stride + ky) * w + ox * stride + kx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (plane * ho + oy) * wo + ox;
        out[o] = src[best];
        argmax[o] = plane * h * w + best;
      }
    }
  }
  return Tensor::make_result({n, c, ho, wo}, std::move(out), {x}, "max_pool2d",
                             [x, argmax = std::move(argmax)](std::span<const double> g) {
    auto gx = x.grad_accumulator();
    for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " does not match weight " +
                     shape_to_string(weight.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), out_features = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_features)) {
    throw ShapeError("linear: bias " + shape_to_string(bias.shape()) + " does not match weight " +
                     shape_to_string(weight.shape()));
  }
  auto dx = x.data();
  auto dw = weight.data();
  std::vector<double> out(n * out_features);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = dx.data() + i * in;
    for (std::size_t o = 0; o < out_features; ++o) {
      const double* wr = dw.data() + o * in;
      double acc = bias.defined() ? bias.data()[o] : 0.0;
      for (std::size_t k = 0; k < in; ++k) acc += xr[k] * wr[k];
      out[i * out_features + o] = acc;
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result({n, out_features}, std::move(out), std::move(inputs), "linear",
                             [x, weight, bias, n, in, out_features](std::span<const double> g) {
    auto dx = x.data();
    auto dw = weight.data();
    if (x.requires_grad()) {
      auto gx = x.grad_accumulator();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out_features; ++o) {
          const double go = g[i * out_features + o];
          const double* wr = dw.data() + o * in;
          double* gr = gx.data() + i * in;
          for (std::size_t k = 0; k < in; ++k) gr[k] += go * wr[k];
        }
      }
    }
    if (weight.requires_grad()) {
      auto gw = weight.grad_accumulator();
      for (std::size_t i = 0; i < n; ++i) {
        const double* xr = dx.data() + i * in;
        for (std::size_t o = 0; o < out_features; ++o) {
          const double go = g[i * out_features + o];
          double* gr = gw.data() + o * in;
          for (std::size_t k = 0; k < in; ++k) gr[k] += go * xr[k];
        }
      }
    }
    if (bias.defined() && bias.requires_grad()) {
      auto gb = bias.grad_accumulator();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out_features; ++o) gb[o] += g[i * out_features + o];
      }
    }
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, double momentum, double epsilon, bool training) {
  const std::size_t channels = channel_count_for_norm(x);
  for (const Tensor* t : {&gamma, &beta, static_cast<const Tensor*>(&running_mean),
                          static_cast<const Tensor*>(&running_var)}) {
    if (t->rank() != 1 || t->dim(0) != channels) {
      throw ShapeError("batch_norm parameter " + shape_to_string(t->shape()) +
                       " does not match input " + shape_to_string(x.shape()));
    }
  }
  const std::size_t n = x.dim(0);
  if (training && n < 2) throw ValueError("batch_norm in training mode needs a batch of at least 2");
  const std::size_t spatial = x.numel() / (n * channels);
  const std::size_t count = n * spatial;
  auto at = [channels, spatial](std::size_t b, std::size_t c, std::size_t s) {
    return (b * channels + c) * spatial + s;
  };

  auto dx = x.data();
  std::vector<double> mu(channels), inv_std(channels);
  if (training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < spatial; ++k) s += dx[at(b, c, k)];
      const double m = s / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < spatial; ++k) {
          const double d = dx[at(b, c, k)] - m;
          sq += d * d;
        }
      const double var = sq / static_cast<double>(count);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + epsilon);
      const double unbiased = sq / static_cast<double>(count - 1);
      rm[c] = momentum * rm[c] + (1.0 - momentum) * m;
      rv[c] = momentum * rv[c] + (1.0 - momentum) * unbiased;
    }
  } else {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(rv[c] + epsilon);
    }
  }

  auto dg = gamma.data();
  auto db = beta.data();
  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t k = 0; k < spatial; ++k) {
        const std::size_t i = at(b, c, k);
        xhat[i] = (dx[i] - mu[c]) * inv_std[c];
        out[i] = dg[c] * xhat[i] + db[c];
      }
    }
  }

  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta}, "batch_norm",
      [x, gamma, beta, training, n, channels, spatial, count, at, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](std::span<const double> g) {
        auto dg = gamma.data();
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t k = 0; k < spatial; ++k) {
              const std::size_t i = at(b, c, k);
              sum_g += g[i];
              sum_gx += g[i] * xhat[i];
            }
          if (gamma.requires_grad()) gamma.grad_accumulator()[c] += sum_gx;
          if (beta.requires_grad()) beta.grad_accumulator()[c] += sum_g;
          if (!x.requires_grad()) continue;
          auto gx = x.grad_accumulator();
          const double scale = dg[c] * inv_std[c];
          if (training) {
            const double m = static_cast<double>(count);
            for (std::size_t b = 0; b < n; ++b)
              for (std::size_t k = 0; k < spatial; ++k) {
                const std::size_t i = at(b, c, k);
                gx[i] += scale * (g[i] - sum_g / m - xhat[i] * sum_gx / m);
              }
          } else {
            for (std::size_t b = 0; b < n; ++b)
              for (std::size_t k = 0; k < spatial; ++k) {
                const std::size_t i = at(b, c, k);
                gx[i] += scale * g[i];
              }
          }
        }
      });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_cross_entropy expects (N, C) logits, got " +
                     shape_to_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ValueError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  auto z = logits.data();
  std::vector<double> probs(n * classes);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * classes;
    const double peak = *std::max_element(row, row + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - peak);
    const double lse = peak + std::log(s);
    for (std::size_t c = 0; c < classes; ++c) probs[i * classes + c] = std::exp(row[c] - lse);
    total += lse - row[labels[i]];
  }
  std::vector<int> targets(labels.begin(), labels.end());
  return Tensor::make_result({}, {total / static_cast<double>(n)}, {logits}, "softmax_cross_entropy",
                             [logits, n, classes, probs = std::move(probs),
                              targets = std::move(targets)](std::span<const double> g) {
    auto gz = logits.grad_accumulator();
    const double coeff = g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < classes; ++c) {
        const double onehot = static_cast<int>(c) == targets[i] ? 1.0 : 0.0;
        gz[i * classes + c] += coeff * (probs[i * classes + c] - onehot);
      }
    }
  });
}

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

ConvLayer ConvLayer::create(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                            std::size_t stride, std::size_t padding, Rng& rng) {
  ConvLayer layer;
  layer.weight = kaiming_uniform({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng);
  layer.bias = Tensor::zeros({out_ch}, true);
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Tensor ConvLayer::forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }

FcLayer FcLayer::create(std::size_t in, std::size_t out, Rng& rng) {
  FcLayer layer;
  layer.weight = kaiming_uniform({out, in}, in, rng);
  layer.bias = Tensor::zeros({out}, true);
  return layer;
}

Tensor FcLayer::forward(const Tensor& x) const { return linear(x, weight, bias); }

BatchNormLayer BatchNormLayer::create(std::size_t channels, double momentum, double epsilon) {
  if (!(momentum > 0.0 && momentum < 1.0)) throw ValueError("batch norm momentum must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ValueError("batch norm epsilon must be positive");
  BatchNormLayer layer;
  layer.gamma = Tensor::full({channels}, 1.0, true);
  layer.beta = Tensor::zeros({channels}, true);
  layer.running_mean = Tensor::zeros({channels});
  layer.running_var = Tensor::full({channels}, 1.0);
  layer.momentum = momentum;
  layer.epsilon = epsilon;
  return layer;
}

Tensor BatchNormLayer::forward(const Tensor& x, bool training) {
  return batch_norm(x, gamma, beta, running_mean, running_var, momentum, epsilon, training);
}

}  // namespace ramreid
