#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cosegnet/tensor.hpp"

// Forward ops with reverse-mode rules. Spatial tensors are h x w x c with
// channels innermost. Every op records itself on the active graph when one
// of its inputs requires grad.
namespace coseg::ops {

enum class ResampleMode { nearest, bilinear };

namespace detail {

inline void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     format_dims(t.dims()));
  }
}

inline void accumulate(Tensor& t, std::span<const double> g) {
  if (!t.requires_grad()) return;
  auto dst = t.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

enum class Broadcast { same, scalar, channel };

inline Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dims() == b.dims()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  if (b.rank() == 1 && b.dim(0) == a.dims().back()) return Broadcast::channel;
  throw ShapeError(op, a.dims(), b.dims());
}

inline std::size_t bindex(Broadcast k, std::size_t i, std::size_t channels) {
  switch (k) {
    case Broadcast::same: return i;
    case Broadcast::scalar: return 0;
    case Broadcast::channel: return i % channels;
  }
  return i;
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Per-axis interpolation table: output index -> (i0, i1, w1).
struct AxisMap {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w1;
};

inline AxisMap make_axis_map(std::size_t in, std::size_t out, ResampleMode mode) {
  AxisMap m;
  m.i0.resize(out);
  m.i1.resize(out);
  m.w1.assign(out, 0.0);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    if (mode == ResampleMode::nearest) {
      std::size_t src = static_cast<std::size_t>(std::floor(static_cast<double>(o) * scale));
      m.i0[o] = m.i1[o] = std::min(src, in - 1);
      continue;
    }
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    std::size_t hi = std::min(lo + 1, in - 1);
    m.i0[o] = lo;
    m.i1[o] = hi;
    m.w1[o] = (hi == lo) ? 0.0 : src - static_cast<double>(lo);
  }
  return m;
}

}  // namespace detail

// Cross-correlation with zero padding. kernel is k x k x c_in x c_out; bias
// may be an undefined Tensor for a bias-free convolution.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     std::size_t stride = 1, std::size_t padding = 0) {
  detail::require_rank("conv2d", input, 3);
  detail::require_rank("conv2d", kernel, 4);
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t k = kernel.dim(0), cout = kernel.dim(3);
  if (kernel.dim(1) != k || k % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd extent, got " + format_dims(kernel.dims()));
  }
  if (kernel.dim(2) != cin) throw ShapeError("conv2d", input.dims(), kernel.dims());
  if (bias.defined() && (bias.size() != cout)) throw ShapeError("conv2d bias", kernel.dims(), bias.dims());
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (h + 2 * padding < k || w + 2 * padding < k) throw ShapeError("conv2d", input.dims(), kernel.dims());
  const std::size_t oh = (h + 2 * padding - k) / stride + 1;
  const std::size_t ow = (w + 2 * padding - k) / stride + 1;

  Tensor out(Shape{oh, ow, cout});
  const double* x = input.ptr();
  const double* kw = kernel.ptr();
  double* y = out.ptr();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* yp = y + (oy * ow + ox) * cout;
      if (bias.defined()) {
        const double* bp = bias.ptr();
        for (std::size_t co = 0; co < cout; ++co) yp[co] = bp[co];
      }
      for (std::size_t ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          const double* xp = x + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
          const double* kp = kw + (ky * k + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double xv = xp[ci];
            const double* kr = kp + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) yp[co] += xv * kr[co];
          }
        }
      }
    }
  }

  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  coseg::detail::record("conv2d", std::move(inputs), out,
      [=](Graph::Node& node) {
        Tensor& in = node.inputs[0];
        Tensor& ker = node.inputs[1];
        const double* gy = node.output.grad().data();
        const bool want_x = in.requires_grad();
        const bool want_k = ker.requires_grad();
        double* gx = want_x ? in.mutable_grad().data() : nullptr;
        double* gk = want_k ? ker.mutable_grad().data() : nullptr;
        const double* xv = in.ptr();
        const double* kv = ker.ptr();
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const double* gyp = gy + (oy * ow + ox) * cout;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                if (ix < 0 || ix >= static_cast<long>(w)) continue;
                const std::size_t xoff = (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
                const std::size_t koff = (ky * k + kx) * cin * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const double* kr = kv + koff + ci * cout;
                  if (want_x) {
                    double acc = 0.0;
                    for (std::size_t co = 0; co < cout; ++co) acc += kr[co] * gyp[co];
                    gx[xoff + ci] += acc;
                  }
                  if (want_k) {
                    const double x0 = xv[xoff + ci];
                    double* gkr = gk + koff + ci * cout;
                    for (std::size_t co = 0; co < cout; ++co) gkr[co] += x0 * gyp[co];
                  }
                }
              }
            }
          }
        }
        if (node.inputs.size() > 2 && node.inputs[2].requires_grad()) {
          double* gb = node.inputs[2].mutable_grad().data();
          for (std::size_t p = 0; p < oh * ow; ++p) {
            for (std::size_t co = 0; co < cout; ++co) gb[co] += gy[p * cout + co];
          }
        }
      });
  return out;
}

// Separable resampling of an h x w x c map to target_h x target_w x c.
// Nearest uses floor index mapping; bilinear uses half-pixel centres
// (align_corners = false) with edge clamping.
inline Tensor resample(const Tensor& input, std::size_t target_h, std::size_t target_w,
                       ResampleMode mode) {
  detail::require_rank("resample", input, 3);
  if (target_h < 1 || target_w < 1) throw ShapeError("resample: target extents must be >= 1");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h == target_h && w == target_w) {
    // Identity; still recorded so gradients pass through.
    Tensor out = input.clone();
    coseg::detail::record("resample", {input}, out, [](Graph::Node& node) {
      detail::accumulate(node.inputs[0], node.output.grad());
    });
    return out;
  }
  auto my = detail::make_axis_map(h, target_h, mode);
  auto mx = detail::make_axis_map(w, target_w, mode);
  Tensor out(Shape{target_h, target_w, c});
  const double* x = input.ptr();
  double* y = out.ptr();
  for (std::size_t oy = 0; oy < target_h; ++oy) {
    const double wy1 = my.w1[oy], wy0 = 1.0 - wy1;
    for (std::size_t ox = 0; ox < target_w; ++ox) {
      const double wx1 = mx.w1[ox], wx0 = 1.0 - wx1;
      const double* p00 = x + (my.i0[oy] * w + mx.i0[ox]) * c;
      const double* p01 = x + (my.i0[oy] * w + mx.i1[ox]) * c;
      const double* p10 = x + (my.i1[oy] * w + mx.i0[ox]) * c;
      const double* p11 = x + (my.i1[oy] * w + mx.i1[ox]) * c;
      double* yp = y + (oy * target_w + ox) * c;
      if (mode == ResampleMode::nearest) {
        for (std::size_t ch = 0; ch < c; ++ch) yp[ch] = p00[ch];
      } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
          yp[ch] = wy0 * (wx0 * p00[ch] + wx1 * p01[ch]) + wy1 * (wx0 * p10[ch] + wx1 * p11[ch]);
        }
      }
    }
  }
  coseg::detail::record("resample", {input}, out,
      [my, mx, w, c, target_h, target_w, mode](Graph::Node& node) {
        if (!node.inputs[0].requires_grad()) return;
        double* gx = node.inputs[0].mutable_grad().data();
        const double* gy = node.output.grad().data();
        for (std::size_t oy = 0; oy < target_h; ++oy) {
          const double wy1 = my.w1[oy], wy0 = 1.0 - wy1;
          for (std::size_t ox = 0; ox < target_w; ++ox) {
            const double* g = gy + (oy * target_w + ox) * c;
            double* q00 = gx + (my.i0[oy] * w + mx.i0[ox]) * c;
            if (mode == ResampleMode::nearest) {
              for (std::size_t ch = 0; ch < c; ++ch) q00[ch] += g[ch];
              continue;
            }
            const double wx1 = mx.w1[ox], wx0 = 1.0 - wx1;
            double* q01 = gx + (my.i0[oy] * w + mx.i1[ox]) * c;
            double* q10 = gx + (my.i1[oy] * w + mx.i0[ox]) * c;
            double* q11 = gx + (my.i1[oy] * w + mx.i1[ox]) * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
              q00[ch] += wy0 * wx0 * g[ch];
              q01[ch] += wy0 * wx1 * g[ch];
              q10[ch] += wy1 * wx0 * g[ch];
              q11[ch] += wy1 * wx1 * g[ch];
            }
          }
        }
      });
  return out;
}

// a + b, where b has a's shape, a single element, or one value per channel.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const auto kind = detail::broadcast_kind("add", a, b);
  const std::size_t ch = a.dims().back();
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[detail::bindex(kind, i, ch)];
  coseg::detail::record("add", {a, b}, out, [kind, ch](Graph::Node& node) {
    auto g = node.output.grad();
    detail::accumulate(node.inputs[0], g);
    Tensor& bb = node.inputs[1];
    if (!bb.requires_grad()) return;
    auto gb = bb.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gb[detail::bindex(kind, i, ch)] += g[i];
  });
  return out;
}

// a * b with the same broadcasting rules as add.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  const auto kind = detail::broadcast_kind("mul", a, b);
  const std::size_t ch = a.dims().back();
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[detail::bindex(kind, i, ch)];
  coseg::detail::record("mul", {a, b}, out, [kind, ch](Graph::Node& node) {
    auto g = node.output.grad();
    Tensor& aa = node.inputs[0];
    Tensor& bb = node.inputs[1];
    if (aa.requires_grad()) {
      auto ga = aa.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bb[detail::bindex(kind, i, ch)];
    }
    if (bb.requires_grad()) {
      auto gb = bb.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[detail::bindex(kind, i, ch)] += g[i] * aa[i];
    }
  });
  return out;
}

inline Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  coseg::detail::record("scale", {a}, out, [factor](Graph::Node& node) {
    if (!node.inputs[0].requires_grad()) return;
    auto g = node.output.grad();
    auto ga = node.inputs[0].mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
  return out;
}

inline Tensor add_scalar(const Tensor& a, double value) {
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + value;
  coseg::detail::record("add_scalar", {a}, out, [](Graph::Node& node) {
    detail::accumulate(node.inputs[0], node.output.grad());
  });
  return out;
}

// Y[y,x,c] = gamma[c] * X[y,x,c] + S[y,x]. shift may be h x w or h x w x 1.
inline Tensor scale_shift(const Tensor& x, const Tensor& gamma, const Tensor& shift) {
  detail::require_rank("scale_shift", x, 3);
  const std::size_t h = x.dim(0), w = x.dim(1), d = x.dim(2);
  if (gamma.size() != d) throw ShapeError("scale_shift gamma", x.dims(), gamma.dims());
  if (shift.size() != h * w || shift.dim(0) != h || shift.dim(1) != w) {
    throw ShapeError("scale_shift shift", x.dims(), shift.dims());
  }
  Tensor out(x.dims());
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t c = 0; c < d; ++c) out[p * d + c] = gamma[c] * x[p * d + c] + shift[p];
  }
  coseg::detail::record("scale_shift", {x, gamma, shift}, out, [h, w, d](Graph::Node& node) {
    auto g = node.output.grad();
    Tensor& xx = node.inputs[0];
    Tensor& gm = node.inputs[1];
    Tensor& sh = node.inputs[2];
    if (xx.requires_grad()) {
      auto gx = xx.mutable_grad();
      for (std::size_t p = 0; p < h * w; ++p)
        for (std::size_t c = 0; c < d; ++c) gx[p * d + c] += g[p * d + c] * gm[c];
    }
    if (gm.requires_grad()) {
      auto gg = gm.mutable_grad();
      for (std::size_t p = 0; p < h * w; ++p)
        for (std::size_t c = 0; c < d; ++c) gg[c] += g[p * d + c] * xx[p * d + c];
    }
    if (sh.requires_grad()) {
      auto gs = sh.mutable_grad();
      for (std::size_t p = 0; p < h * w; ++p) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += g[p * d + c];
        gs[p] += acc;
      }
    }
  });
  return out;
}

// Subgradient 0 at the kink.
inline Tensor relu(const Tensor& a) {
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  coseg::detail::record("relu", {a}, out, [](Graph::Node& node) {
    if (!node.inputs[0].requires_grad()) return;
    auto g = node.output.grad();
    auto ga = node.inputs[0].mutable_grad();
    const Tensor& in = node.inputs[0];
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > 0.0) ga[i] += g[i];
  });
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  Tensor out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::stable_sigmoid(a[i]);
  coseg::detail::record("sigmoid", {a}, out, [](Graph::Node& node) {
    if (!node.inputs[0].requires_grad()) return;
    auto g = node.output.grad();
    auto ga = node.inputs[0].mutable_grad();
    const Tensor& y = node.output;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul", a.dims(), b.dims());
  Tensor out(Shape{m, n});
  const double* ap = a.ptr();
  const double* bp = b.ptr();
  double* cp = out.ptr();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = cp + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      const double* brow = bp + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  coseg::detail::record("matmul", {a, b}, out, [m, k, n](Graph::Node& node) {
    const double* g = node.output.grad().data();
    Tensor& aa = node.inputs[0];
    Tensor& bb = node.inputs[1];
    if (aa.requires_grad()) {
      // dA = dC * B^T
      double* ga = aa.mutable_grad().data();
      const double* bp2 = bb.ptr();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bp2[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (bb.requires_grad()) {
      // dB = A^T * dC
      double* gb = bb.mutable_grad().data();
      const double* ap2 = aa.ptr();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ap2[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
    }
  });
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  coseg::detail::record("transpose", {a}, out, [m, n](Graph::Node& node) {
    if (!node.inputs[0].requires_grad()) return;
    auto g = node.output.grad();
    auto ga = node.inputs[0].mutable_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
  return out;
}

// Divides every position's channel vector (last axis) by sqrt(|x|^2 + eps).
inline Tensor l2_normalize_positions(const Tensor& input, double epsilon = 1e-12) {
  if (!(epsilon > 0.0)) throw ContractError("l2_normalize_positions: epsilon must be > 0");
  const std::size_t d = input.dims().back();
  const std::size_t positions = input.size() / d;
  Tensor out(input.dims());
  std::vector<double> inv_norm(positions);
  for (std::size_t p = 0; p < positions; ++p) {
    const double* x = input.ptr() + p * d;
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) sq += x[c] * x[c];
    inv_norm[p] = 1.0 / std::sqrt(sq + epsilon);
    for (std::size_t c = 0; c < d; ++c) out[p * d + c] = x[c] * inv_norm[p];
  }
  coseg::detail::record("l2_normalize_positions", {input}, out,
      [d, positions, inv_norm = std::move(inv_norm)](Graph::Node& node) {
        if (!node.inputs[0].requires_grad()) return;
        // dx = (g - y (y.g)) / r, with y = x / r
        auto g = node.output.grad();
        auto gx = node.inputs[0].mutable_grad();
        const Tensor& y = node.output;
        for (std::size_t p = 0; p < positions; ++p) {
          double yg = 0.0;
          for (std::size_t c = 0; c < d; ++c) yg += y[p * d + c] * g[p * d + c];
          for (std::size_t c = 0; c < d; ++c)
            gx[p * d + c] += (g[p * d + c] - y[p * d + c] * yg) * inv_norm[p];
        }
      });
  return out;
}

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  coseg::detail::record("sum", {a}, out, [](Graph::Node& node) {
    if (!node.inputs[0].requires_grad()) return;
    const double g = node.output.grad()[0];
    for (double& v : node.inputs[0].mutable_grad()) v += g;
  });
  return out;
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Tensor reshape(const Tensor& a, Shape dims) {
  if (shape_size(dims) != a.size()) throw ShapeError("reshape", a.dims(), dims);
  Tensor out(std::move(dims), std::vector<double>(a.data().begin(), a.data().end()));
  coseg::detail::record("reshape", {a}, out, [](Graph::Node& node) {
    detail::accumulate(node.inputs[0], node.output.grad());
  });
  return out;
}

// Concatenates along the leading axis; trailing extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape dims = parts.front().dims();
  std::size_t lead = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != dims.size() || !std::equal(dims.begin() + 1, dims.end(), p.dims().begin() + 1)) {
      throw ShapeError("concat", parts.front().dims(), p.dims());
    }
    lead += p.dim(0);
  }
  dims[0] = lead;
  Tensor out(dims);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<long>(offset));
    offset += p.size();
  }
  coseg::detail::record("concat", parts, out, [](Graph::Node& node) {
    auto g = node.output.grad();
    std::size_t off = 0;
    for (Tensor& p : node.inputs) {
      detail::accumulate(p, g.subspan(off, p.size()));
      off += p.size();
    }
  });
  return out;
}

// Channel covariance of an (h x w x c) or (positions x c) tensor:
// (1/P) * Fc^T Fc with Fc the per-channel mean-subtracted features. With
// centered = false the raw second moment (1/P) F^T F is returned instead.
inline Tensor covariance(const Tensor& features, bool centered = true) {
  if (features.rank() < 2) throw ShapeError("covariance: expected rank >= 2, got " + format_dims(features.dims()));
  const std::size_t c = features.dims().back();
  const std::size_t positions = features.size() / c;
  const double inv_p = 1.0 / static_cast<double>(positions);
  std::vector<double> fc(features.data().begin(), features.data().end());
  // Every entry is summed over its terms in sorted order, so the result
  // depends only on the multiset of positions and is bit-for-bit invariant
  // to reordering them.
  std::vector<double> terms(positions);
  auto ordered_sum = [&terms] {
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += t;
    return acc;
  };
  if (centered) {
    std::vector<double> mu(c);
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t p = 0; p < positions; ++p) terms[p] = fc[p * c + j];
      mu[j] = ordered_sum() * inv_p;
    }
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t j = 0; j < c; ++j) fc[p * c + j] -= mu[j];
  }
  Tensor out(Shape{c, c});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = i; j < c; ++j) {
      for (std::size_t p = 0; p < positions; ++p) terms[p] = fc[p * c + i] * fc[p * c + j];
      out[i * c + j] = out[j * c + i] = ordered_sum() * inv_p;
    }
  coseg::detail::record("covariance", {features}, out,
      [c, positions, inv_p, centered, fc = std::move(fc)](Graph::Node& node) {
        if (!node.inputs[0].requires_grad()) return;
        // dFc = (1/P) Fc (G + G^T); centring is a projection, so the input
        // gradient is dFc with its per-channel mean removed.
        auto g = node.output.grad();
        std::vector<double> sym(c * c);
        for (std::size_t i = 0; i < c; ++i)
          for (std::size_t j = 0; j < c; ++j) sym[i * c + j] = g[i * c + j] + g[j * c + i];
        std::vector<double> dfc(positions * c, 0.0);
        for (std::size_t p = 0; p < positions; ++p)
          for (std::size_t i = 0; i < c; ++i) {
            const double fi = fc[p * c + i];
            for (std::size_t j = 0; j < c; ++j) dfc[p * c + j] += fi * sym[i * c + j];
          }
        for (double& v : dfc) v *= inv_p;
        if (centered) {
          std::vector<double> mu(c, 0.0);
          for (std::size_t p = 0; p < positions; ++p)
            for (std::size_t j = 0; j < c; ++j) mu[j] += dfc[p * c + j];
          for (std::size_t p = 0; p < positions; ++p)
            for (std::size_t j = 0; j < c; ++j) dfc[p * c + j] -= mu[j] * inv_p;
        }
        detail::accumulate(node.inputs[0], dfc);
      });
  return out;
}

inline constexpr double kLogClamp = 1e-12;

// sum_i -[ pos_weight * t_i * log(p_i) + neg_weight * (1 - t_i) * log(1 - p_i) ]
// with log arguments clamped below at 1e-12. target is treated as constant.
inline Tensor weighted_bce_sum(const Tensor& pred, const Tensor& target, double pos_weight,
                               double neg_weight) {
  if (pred.size() != target.size()) throw ShapeError("weighted_bce_sum", pred.dims(), target.dims());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i], t = target[i];
    if (t != 0.0) acc -= pos_weight * t * std::log(std::max(p, kLogClamp));
    if (t != 1.0) acc -= neg_weight * (1.0 - t) * std::log(std::max(1.0 - p, kLogClamp));
  }
  Tensor out = Tensor::scalar(acc);
  coseg::detail::record("weighted_bce_sum", {pred}, out,
      [target, pos_weight, neg_weight](Graph::Node& node) {
        if (!node.inputs[0].requires_grad()) return;
        const double g = node.output.grad()[0];
        auto gp = node.inputs[0].mutable_grad();
        const Tensor& pr = node.inputs[0];
        for (std::size_t i = 0; i < pr.size(); ++i) {
          const double p = pr[i], t = target[i];
          double d = 0.0;
          if (t != 0.0 && p > kLogClamp) d -= pos_weight * t / p;
          if (t != 1.0 && 1.0 - p > kLogClamp) d += neg_weight * (1.0 - t) / (1.0 - p);
          gp[i] += g * d;
        }
      });
  return out;
}

}  // namespace coseg::ops
