#pragma once

// Forward and backward kernels for the layers of the digit CNN.
//
// Conventions: activations are NCHW (or N x features for dense layers),
// dense weights are stored (in, out). Every backward routine reads the
// output gradient from `output.grad()` and *accumulates* into the grad
// buffers of its inputs and parameters; data buffers are never written.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "golden_sgd/errors.hpp"
#include "golden_sgd/rng.hpp"
#include "golden_sgd/tensor.hpp"

namespace golden_sgd {

namespace detail {

inline double dot(const double* a, const double* b, std::size_t n) noexcept {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// y += (w0*x0 + w1*x1) + (w2*x2 + w3*x3), elementwise.
inline void axpy4(const double* w, const double* x0, const double* x1, const double* x2, const double* x3,
                  double* y, std::size_t n) noexcept {
  const double w0 = w[0], w1 = w[1], w2 = w[2], w3 = w[3];
  for (std::size_t i = 0; i < n; ++i) y[i] += (w0 * x0[i] + w1 * x1[i]) + (w2 * x2[i] + w3 * x3[i]);
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                     shape_to_string(t.shape()));
  }
}

}  // namespace detail

// Uniform in [-sqrt(6/fan_in), +sqrt(6/fan_in)] (Kaiming uniform, ReLU gain).
inline Tensor kaiming_uniform_init(Rng& rng, std::size_t fan_in, Shape shape) {
  if (fan_in == 0) throw DomainError("kaiming_uniform_init requires fan_in >= 1");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

// ---------------------------------------------------------------- conv2d

struct Conv2dGeometry {
  std::size_t batch, in_channels, in_h, in_w;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;
};

inline Conv2dGeometry conv2d_geometry(const Tensor& input, const Tensor& weight, const Tensor& bias,
                                      std::size_t stride, std::size_t padding) {
  detail::require_rank(input, 4, "conv2d input");
  detail::require_rank(weight, 4, "conv2d weight");
  detail::require_rank(bias, 1, "conv2d bias");
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  Conv2dGeometry g{};
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.in_h = input.dim(2);
  g.in_w = input.dim(3);
  g.out_channels = weight.dim(0);
  g.kernel_h = weight.dim(2);
  g.kernel_w = weight.dim(3);
  g.stride = stride;
  g.padding = padding;
  if (weight.dim(1) != g.in_channels) {
    throw ShapeError("conv2d weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, input has " + std::to_string(g.in_channels));
  }
  if (bias.dim(0) != g.out_channels) {
    throw ShapeError("conv2d bias length " + std::to_string(bias.dim(0)) +
                     " != output channels " + std::to_string(g.out_channels));
  }
  if (g.in_h + 2 * padding < g.kernel_h || g.in_w + 2 * padding < g.kernel_w) {
    throw ShapeError("conv2d kernel larger than padded input");
  }
  g.out_h = (g.in_h + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.in_w + 2 * padding - g.kernel_w) / stride + 1;
  return g;
}

namespace detail {

// Unfolds one sample (C, H, W) into a (C*KH*KW, OH*OW) matrix; taps that
// fall into the zero padding are 0.
inline void im2col(const double* in, const Conv2dGeometry& g, double* col) {
  const std::size_t out_plane = g.out_h * g.out_w;
  std::size_t row = 0;
  for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
    const double* iplane = in + ic * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        double* dst = col + row * out_plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::size_t iy = oy * g.stride + ky;  // offset by padding
          double* drow = dst + oy * g.out_w;
          if (iy < g.padding || iy - g.padding >= g.in_h) {
            std::fill(drow, drow + g.out_w, 0.0);
            continue;
          }
          const double* irow = iplane + (iy - g.padding) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::size_t ix = ox * g.stride + kx;
            drow[ox] = (ix < g.padding || ix - g.padding >= g.in_w) ? 0.0 : irow[ix - g.padding];
          }
        }
      }
    }
  }
}

// Transposed unfolding: one row of C*KH*KW taps per output position.
inline void im2row(const double* in, const Conv2dGeometry& g, double* rows) {
  const std::size_t taps = g.in_channels * g.kernel_h * g.kernel_w;
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      double* dst = rows + (oy * g.out_w + ox) * taps;
      std::size_t t = 0;
      for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
        const double* iplane = in + ic * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
          const std::size_t iy = oy * g.stride + ky;
          const bool row_ok = iy >= g.padding && iy - g.padding < g.in_h;
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++t) {
            const std::size_t ix = ox * g.stride + kx;
            dst[t] = (row_ok && ix >= g.padding && ix - g.padding < g.in_w)
                         ? iplane[(iy - g.padding) * g.in_w + ix - g.padding]
                         : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2row: accumulates row-layout gradients onto the input.
inline void row2im_add(const double* rows, const Conv2dGeometry& g, double* in) {
  const std::size_t taps = g.in_channels * g.kernel_h * g.kernel_w;
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const double* src = rows + (oy * g.out_w + ox) * taps;
      std::size_t t = 0;
      for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
        double* iplane = in + ic * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
          const std::size_t iy = oy * g.stride + ky;
          const bool row_ok = iy >= g.padding && iy - g.padding < g.in_h;
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++t) {
            const std::size_t ix = ox * g.stride + kx;
            if (row_ok && ix >= g.padding && ix - g.padding < g.in_w) {
              iplane[(iy - g.padding) * g.in_w + ix - g.padding] += src[t];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// Below this many taps per output, weight gradients use the column layout.
inline constexpr std::size_t kRowLayoutMinTaps = 16;

inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     std::size_t stride = 1, std::size_t padding = 1) {
  const auto g = conv2d_geometry(input, weight, bias, stride, padding);
  Tensor out({g.batch, g.out_channels, g.out_h, g.out_w});
  const std::size_t in_sample = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t taps = g.in_channels * g.kernel_h * g.kernel_w;
  std::vector<double> col(taps * out_plane);
  const double* w = weight.data().data();
  for (std::size_t n = 0; n < g.batch; ++n) {
    detail::im2col(input.data().data() + n * in_sample, g, col.data());
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
      double* oplane = out.data().data() + (n * g.out_channels + oc) * out_plane;
      std::fill(oplane, oplane + out_plane, bias[oc]);
      const double* wrow = w + oc * taps;
      const double* c = col.data();
      std::size_t r = 0;
      for (; r + 4 <= taps; r += 4) {
        detail::axpy4(wrow + r, c + r * out_plane, c + (r + 1) * out_plane, c + (r + 2) * out_plane,
                      c + (r + 3) * out_plane, oplane, out_plane);
      }
      for (; r < taps; ++r) detail::axpy(wrow[r], c + r * out_plane, oplane, out_plane);
    }
  }
  return out;
}

// `input_grad = false` skips the input gradient (e.g. for the first layer).
inline void conv2d_backward(Tensor& input, Tensor& weight, Tensor& bias, const Tensor& output,
                            std::size_t stride = 1, std::size_t padding = 1, bool input_grad = true) {
  const auto g = conv2d_geometry(input, weight, bias, stride, padding);
  if (output.shape() != Shape{g.batch, g.out_channels, g.out_h, g.out_w}) {
    throw ShapeError("conv2d_backward output shape mismatch " + shape_to_string(output.shape()));
  }
  const std::size_t in_sample = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t taps = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t oc_n = g.out_channels;
  std::vector<double> rows(out_plane * taps);
  std::vector<double> col(out_plane * taps);
  std::vector<double> grows(out_plane * taps);
  const double* w = weight.data().data();
  double* gw = weight.grad().data();
  double* gb = bias.grad().data();
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* go = output.grad().data() + n * oc_n * out_plane;
    const double* rw = rows.data();
    for (std::size_t oc = 0; oc < oc_n; ++oc) {
      const double* goplane = go + oc * out_plane;
      double bsum = 0.0;
      for (std::size_t i = 0; i < out_plane; ++i) bsum += goplane[i];
      gb[oc] += bsum;
    }
    if (taps < kRowLayoutMinTaps) {
      // dW[oc, r] += <go[oc, :], col[r, :]>
      detail::im2col(input.data().data() + n * in_sample, g, col.data());
      for (std::size_t oc = 0; oc < oc_n; ++oc) {
        for (std::size_t r = 0; r < taps; ++r) {
          gw[oc * taps + r] += detail::dot(go + oc * out_plane, col.data() + r * out_plane, out_plane);
        }
      }
    } else {
      detail::im2row(input.data().data() + n * in_sample, g, rows.data());
    }
    // dW[oc, :] += sum_p go[oc, p] * rows[p, :]
    for (std::size_t oc = 0; oc < oc_n && taps >= kRowLayoutMinTaps; ++oc) {
      const double* goplane = go + oc * out_plane;
      double* gwrow = gw + oc * taps;
      std::size_t p = 0;
      for (; p + 4 <= out_plane; p += 4) {
        detail::axpy4(goplane + p, rw + p * taps, rw + (p + 1) * taps, rw + (p + 2) * taps, rw + (p + 3) * taps,
                      gwrow, taps);
      }
      for (; p < out_plane; ++p) detail::axpy(goplane[p], rw + p * taps, gwrow, taps);
    }
    if (!input_grad) continue;
    // dRows[p, :] = sum_oc go[oc, p] * W[oc, :]
    std::fill(grows.begin(), grows.end(), 0.0);
    for (std::size_t p = 0; p < out_plane; ++p) {
      double* grow = grows.data() + p * taps;
      std::size_t oc = 0;
      for (; oc + 4 <= oc_n; oc += 4) {
        const double gk[4] = {go[oc * out_plane + p], go[(oc + 1) * out_plane + p], go[(oc + 2) * out_plane + p],
                              go[(oc + 3) * out_plane + p]};
        detail::axpy4(gk, w + oc * taps, w + (oc + 1) * taps, w + (oc + 2) * taps, w + (oc + 3) * taps, grow, taps);
      }
      for (; oc < oc_n; ++oc) detail::axpy(go[oc * out_plane + p], w + oc * taps, grow, taps);
    }
    detail::row2im_add(grows.data(), g, input.grad().data() + n * in_sample);
  }
}

// ------------------------------------------------------------------ relu

inline Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  auto src = input.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  return out;
}

inline void relu_backward(Tensor& input, const Tensor& output) {
  auto x = input.data();
  auto gi = input.grad();
  auto go = output.grad();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0) gi[i] += go[i];
  }
}

// ------------------------------------------------------------- maxpool2x2

// Non-overlapping 2x2 max pooling. `argmax` receives, per output cell, the
// flat input index of the first (row-major) maximal element of its window.
inline Tensor maxpool2x2(const Tensor& input, std::vector<std::size_t>& argmax) {
  detail::require_rank(input, 4, "maxpool2x2 input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2x2 requires even spatial size, got " + shape_to_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  argmax.resize(out.size());
  const double* in = input.data().data();
  double* o = out.data().data();
  std::size_t k = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++k) {
        const std::size_t i00 = base + (2 * oy) * w + 2 * ox;
        const std::size_t candidates[4] = {i00, i00 + 1, i00 + w, i00 + w + 1};
        std::size_t best = candidates[0];
        for (std::size_t j = 1; j < 4; ++j) {
          if (in[candidates[j]] > in[best]) best = candidates[j];
        }
        o[k] = in[best];
        argmax[k] = best;
      }
    }
  }
  return out;
}

inline Tensor maxpool2x2(const Tensor& input) {
  std::vector<std::size_t> argmax;
  return maxpool2x2(input, argmax);
}

inline void maxpool2x2_backward(Tensor& input, const Tensor& output,
                                std::span<const std::size_t> argmax) {
  auto gi = input.grad();
  auto go = output.grad();
  for (std::size_t k = 0; k < go.size(); ++k) gi[argmax[k]] += go[k];
}

// --------------------------------------------------------------- dropout

// Inverted dropout. In training mode each element is zeroed with
// probability `rate` and survivors are scaled by 1/(1-rate); `mask` receives
// the per-element multiplier. In evaluation mode the input is returned as is
// and `mask` is cleared.
inline Tensor dropout(const Tensor& input, double rate, Rng& rng, bool training,
                      std::vector<double>& mask) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw DomainError("dropout rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) {
    mask.clear();
    return input.reshaped(input.shape());
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor out(input.shape());
  mask.resize(input.size());
  auto src = input.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    dst[i] = src[i] * mask[i];
  }
  return out;
}

inline void dropout_backward(Tensor& input, const Tensor& output, std::span<const double> mask) {
  auto gi = input.grad();
  auto go = output.grad();
  if (mask.empty()) {
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
  } else {
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * mask[i];
  }
}

// ----------------------------------------------------------------- dense

inline Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  detail::require_rank(input, 2, "dense input");
  detail::require_rank(weight, 2, "dense weight");
  detail::require_rank(bias, 1, "dense bias");
  const std::size_t batch = input.dim(0), in = input.dim(1), out = weight.dim(1);
  if (weight.dim(0) != in) {
    throw ShapeError("dense weight " + shape_to_string(weight.shape()) + " incompatible with input " +
                     shape_to_string(input.shape()));
  }
  if (bias.dim(0) != out) {
    throw ShapeError("dense bias length " + std::to_string(bias.dim(0)) + " != " + std::to_string(out));
  }
  Tensor result({batch, out});
  const double* x = input.data().data();
  const double* w = weight.data().data();
  double* y = result.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    double* yrow = y + b * out;
    std::copy(bias.data().begin(), bias.data().end(), yrow);
    const double* xrow = x + b * in;
    for (std::size_t i = 0; i < in; ++i) {
      if (xrow[i] != 0.0) detail::axpy(xrow[i], w + i * out, yrow, out);
    }
  }
  return result;
}

inline void dense_backward(Tensor& input, Tensor& weight, Tensor& bias, const Tensor& output) {
  const std::size_t batch = input.dim(0), in = input.dim(1), out = weight.dim(1);
  if (output.shape() != Shape{batch, out}) {
    throw ShapeError("dense_backward output shape mismatch " + shape_to_string(output.shape()));
  }
  const double* x = input.data().data();
  const double* w = weight.data().data();
  const double* go = output.grad().data();
  double* gx = input.grad().data();
  double* gw = weight.grad().data();
  double* gb = bias.grad().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* gorow = go + b * out;
    const double* xrow = x + b * in;
    double* gxrow = gx + b * in;
    detail::axpy(1.0, gorow, gb, out);
    for (std::size_t i = 0; i < in; ++i) {
      if (xrow[i] != 0.0) detail::axpy(xrow[i], gorow, gw + i * out, out);
      gxrow[i] += detail::dot(w + i * out, gorow, out);
    }
  }
}

// --------------------------------------------------- softmax cross-entropy

inline void check_labels(const Tensor& logits, std::span<const int> labels) {
  detail::require_rank(logits, 2, "logits");
  if (labels.size() != logits.dim(0)) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " != batch size " +
                     std::to_string(logits.dim(0)));
  }
  const auto classes = static_cast<int>(logits.dim(1));
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw DomainError("label " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");
    }
  }
}

// Row-wise softmax with max subtraction.
inline std::vector<double> softmax_rows(const Tensor& logits) {
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<double> p(logits.size());
  auto z = logits.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = z.data() + b * classes;
    const double m = *std::max_element(row, row + classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += (p[b * classes + c] = std::exp(row[c] - m));
    for (std::size_t c = 0; c < classes; ++c) p[b * classes + c] /= sum;
  }
  return p;
}

// Per-sample losses -log softmax(z)[y].
inline std::vector<double> cross_entropy_per_sample(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<double> losses(batch);
  auto z = logits.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = z.data() + b * classes;
    const double m = *std::max_element(row, row + classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - m);
    losses[b] = std::log(sum) + m - row[labels[b]];
  }
  return losses;
}

inline double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const auto losses = cross_entropy_per_sample(logits, labels);
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(losses.size());
}

// Accumulates d(mean loss)/d(logits) = (softmax - onehot) / batch, times `scale`.
inline void softmax_cross_entropy_backward(Tensor& logits, std::span<const int> labels,
                                           double scale = 1.0) {
  check_labels(logits, labels);
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  const auto p = softmax_rows(logits);
  auto g = logits.grad();
  const double inv = scale / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < classes; ++c) {
      const double target = static_cast<int>(c) == labels[b] ? 1.0 : 0.0;
      g[b * classes + c] += (p[b * classes + c] - target) * inv;
    }
  }
}

}  // namespace golden_sgd
