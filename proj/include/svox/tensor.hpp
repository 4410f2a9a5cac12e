#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "svox/error.hpp"

namespace svox {

struct Shape5 {
  int n = 1, c = 1, d = 1, h = 1, w = 1;

  std::size_t spatial() const { return static_cast<std::size_t>(d) * h * w; }
  std::size_t count() const { return static_cast<std::size_t>(n) * c * spatial(); }
  bool same_spatial(const Shape5& o) const { return d == o.d && h == o.h && w == o.w; }

  friend bool operator==(const Shape5&, const Shape5&) = default;
};

inline std::string to_string(const Shape5& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.d) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

/// Rank-5 (N, C, D, H, W) array, W fastest. `grad` is either empty or a
/// same-shape 64-bit accumulation buffer.
template <class T>
struct Tensor5 {
  Shape5 shape;
  std::vector<T> values;
  std::vector<double> grad;

  Tensor5() = default;
  explicit Tensor5(Shape5 s, T fill = T(0)) : shape(s), values(s.count(), fill) {}

  std::size_t size() const { return values.size(); }

  std::size_t offset(int n, int c, int d, int h, int w) const {
    return (((static_cast<std::size_t>(n) * shape.c + c) * shape.d + d) * shape.h + h) * shape.w + w;
  }
  T& at(int n, int c, int d, int h, int w) { return values[offset(n, c, d, h, w)]; }
  T at(int n, int c, int d, int h, int w) const { return values[offset(n, c, d, h, w)]; }

  std::size_t plane_offset(int n, int c) const {
    return (static_cast<std::size_t>(n) * shape.c + c) * shape.spatial();
  }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
  }
};

/// Conv weights (C_out, C_in, kD, kH, kW) and per-output-channel bias.
/// Stride is always 1 with "same" zero padding.
template <class T>
struct ConvParams {
  int c_out = 1, c_in = 1, kd = 1, kh = 1, kw = 1;
  std::vector<T> weights;
  std::vector<T> bias;

  ConvParams() : weights(1, T(0)), bias(1, T(0)) {}
  ConvParams(int co, int ci, int k_d, int k_h, int k_w)
      : c_out(co), c_in(ci), kd(k_d), kh(k_h), kw(k_w),
        weights(static_cast<std::size_t>(co) * ci * k_d * k_h * k_w, T(0)),
        bias(static_cast<std::size_t>(co), T(0)) {}
  ConvParams(int co, int ci, int k) : ConvParams(co, ci, k, k, k) {}

  std::size_t kernel_volume() const { return static_cast<std::size_t>(kd) * kh * kw; }
  std::size_t param_count() const { return weights.size() + bias.size(); }
  std::size_t weight_offset(int co, int ci) const {
    return (static_cast<std::size_t>(co) * c_in + ci) * kernel_volume();
  }

  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

struct ConvGrads {
  std::vector<double> weights;
  std::vector<double> bias;

  template <class T>
  explicit ConvGrads(const ConvParams<T>& p) : weights(p.weights.size(), 0.0), bias(p.bias.size(), 0.0) {}
  ConvGrads() = default;

  void zero() {
    std::fill(weights.begin(), weights.end(), 0.0);
    std::fill(bias.begin(), bias.end(), 0.0);
  }
};

namespace detail {

template <class T>
void check_conv(const Tensor5<T>& x, const ConvParams<T>& p) {
  if (x.shape.c != p.c_in)
    throw Error("tensor", "conv3d channel mismatch: input has " + std::to_string(x.shape.c) +
                              " channels, kernel expects " + std::to_string(p.c_in));
  if (p.kd % 2 == 0 || p.kh % 2 == 0 || p.kw % 2 == 0)
    throw Error("tensor", "conv3d kernel dims must be odd");
}

// Zero-padded layout for one sample. Output voxel (d,h,w) lives at flat index
// d*hwp + h*wp + w and kernel tap (a,b,c) reads the padded input at that index
// plus a*hwp + b*wp + c, so every tap is a single contiguous run of `span`.
struct PadGeometry {
  int hp = 0, wp = 0;
  std::size_t hwp = 0, padded = 0, span = 0;

  PadGeometry(const Shape5& s, int rd, int rh, int rw)
      : hp(s.h + 2 * rh), wp(s.w + 2 * rw), hwp(static_cast<std::size_t>(hp) * wp),
        padded(static_cast<std::size_t>(s.d + 2 * rd) * hwp),
        span(static_cast<std::size_t>(s.d - 1) * hwp + static_cast<std::size_t>(s.h - 1) * wp + s.w) {}

  std::size_t shift(int a, int b, int c) const { return a * hwp + static_cast<std::size_t>(b) * wp + c; }
  std::size_t row(int d, int h) const { return d * hwp + static_cast<std::size_t>(h) * wp; }
};

template <class T>
void pad_sample(const Tensor5<T>& x, int n, const PadGeometry& g, int rd, int rh, int rw, std::vector<T>& out) {
  const Shape5& s = x.shape;
  out.assign(static_cast<std::size_t>(s.c) * g.padded, T(0));
  for (int c = 0; c < s.c; ++c) {
    const T* src = x.values.data() + x.plane_offset(n, c);
    T* dst = out.data() + c * g.padded;
    for (int d = 0; d < s.d; ++d)
      for (int h = 0; h < s.h; ++h)
        std::copy_n(src + (static_cast<std::size_t>(d) * s.h + h) * s.w, s.w, dst + g.row(d + rd, h + rh) + rw);
  }
}

// Dot product over eight fixed partial sums, combined pairwise.
template <class A, class B>
double ordered_dot(const A* a, const B* b, std::size_t n) {
  double part[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (int k = 0; k < 8; ++k) part[k] += static_cast<double>(a[j + k]) * static_cast<double>(b[j + k]);
  for (; j < n; ++j) part[j % 8] += static_cast<double>(a[j]) * static_cast<double>(b[j]);
  return ((part[0] + part[1]) + (part[2] + part[3])) + ((part[4] + part[5]) + (part[6] + part[7]));
}

}  // namespace detail

template <class T>
Tensor5<T> conv3d(const Tensor5<T>& x, const ConvParams<T>& p) {
  detail::check_conv(x, p);
  const Shape5& s = x.shape;
  Tensor5<T> y(Shape5{s.n, p.c_out, s.d, s.h, s.w});
  const int rd = p.kd / 2, rh = p.kh / 2, rw = p.kw / 2;
  const detail::PadGeometry g(s, rd, rh, rw);
  std::vector<T> xp, acc(g.span);
  for (int n = 0; n < s.n; ++n) {
    detail::pad_sample(x, n, g, rd, rh, rw, xp);
    for (int co = 0; co < p.c_out; ++co) {
      std::fill(acc.begin(), acc.end(), p.bias[co]);
      for (int ci = 0; ci < p.c_in; ++ci) {
        const T* in = xp.data() + ci * g.padded;
        const T* wk = p.weights.data() + p.weight_offset(co, ci);
        for (int a = 0; a < p.kd; ++a)
          for (int b = 0; b < p.kh; ++b)
            for (int c = 0; c < p.kw; ++c) {
              const T wv = wk[(a * p.kh + b) * p.kw + c];
              if (wv == T(0)) continue;
              const T* src = in + g.shift(a, b, c);
              T* o = acc.data();
              for (std::size_t j = 0; j < g.span; ++j) o[j] += wv * src[j];
            }
      }
      T* out = y.values.data() + y.plane_offset(n, co);
      for (int d = 0; d < s.d; ++d)
        for (int h = 0; h < s.h; ++h)
          std::copy_n(acc.data() + g.row(d, h), s.w, out + (static_cast<std::size_t>(d) * s.h + h) * s.w);
    }
  }
  return y;
}

/// Accumulates dL/dW and dL/db into `g`, and dL/dx into `x.grad` when `x`
/// carries a gradient buffer. `y.grad` must be populated.
template <class T>
void conv3d_backward(Tensor5<T>& x, const ConvParams<T>& p, const Tensor5<T>& y, ConvGrads& g) {
  detail::check_conv(x, p);
  const Shape5& s = x.shape;
  const int rd = p.kd / 2, rh = p.kh / 2, rw = p.kw / 2;
  const detail::PadGeometry geo(s, rd, rh, rw);
  const bool want_dx = x.has_grad();
  std::vector<T> xp;
  std::vector<double> dyp(geo.span), dxp;
  for (int n = 0; n < s.n; ++n) {
    detail::pad_sample(x, n, geo, rd, rh, rw, xp);
    if (want_dx) dxp.assign(static_cast<std::size_t>(s.c) * geo.padded, 0.0);
    for (int co = 0; co < p.c_out; ++co) {
      const double* dy = y.grad.data() + y.plane_offset(n, co);
      double bsum = 0.0;
      for (std::size_t i = 0; i < s.spatial(); ++i) bsum += dy[i];
      g.bias[co] += bsum;
      // junk columns of the padded layout stay zero so they contribute nothing
      std::fill(dyp.begin(), dyp.end(), 0.0);
      for (int d = 0; d < s.d; ++d)
        for (int h = 0; h < s.h; ++h)
          std::copy_n(dy + (static_cast<std::size_t>(d) * s.h + h) * s.w, s.w, dyp.data() + geo.row(d, h));
      for (int ci = 0; ci < p.c_in; ++ci) {
        const T* in = xp.data() + ci * geo.padded;
        const std::size_t wbase = p.weight_offset(co, ci);
        for (int a = 0; a < p.kd; ++a)
          for (int b = 0; b < p.kh; ++b)
            for (int c = 0; c < p.kw; ++c) {
              const std::size_t k = static_cast<std::size_t>((a * p.kh + b) * p.kw + c);
              const std::size_t shift = geo.shift(a, b, c);
              g.weights[wbase + k] += detail::ordered_dot(dyp.data(), in + shift, geo.span);
              if (!want_dx) continue;
              const double wv = static_cast<double>(p.weights[wbase + k]);
              if (wv == 0.0) continue;
              double* gx = dxp.data() + ci * geo.padded + shift;
              for (std::size_t j = 0; j < geo.span; ++j) gx[j] += wv * dyp[j];
            }
      }
    }
    if (!want_dx) continue;
    for (int ci = 0; ci < s.c; ++ci) {
      double* dst = x.grad.data() + x.plane_offset(n, ci);
      const double* src = dxp.data() + ci * geo.padded;
      for (int d = 0; d < s.d; ++d)
        for (int h = 0; h < s.h; ++h) {
          const double* r = src + geo.row(d + rd, h + rh) + rw;
          double* o = dst + (static_cast<std::size_t>(d) * s.h + h) * s.w;
          for (int w = 0; w < s.w; ++w) o[w] += r[w];
        }
    }
  }
}

template <class T>
Tensor5<T> relu(const Tensor5<T>& x) {
  Tensor5<T> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y.values[i] = x.values[i] > T(0) ? x.values[i] : T(0);
  return y;
}

template <class T>
void relu_backward(Tensor5<T>& x, const Tensor5<T>& y) {
  x.ensure_grad();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x.values[i] > T(0)) x.grad[i] += y.grad[i];
}

namespace detail {

// Separable 3^3 max over one (D,H,W) plane: a 3-wide max along W, then H,
// then D. When `arg` is given it receives the flat in-plane index of the
// first (d,h,w)-lexicographic maximum: each pass keeps the lowest index among
// equal values, and lexicographic-first decomposes axis by axis.
template <class T>
void pool_plane(const T* in, const Shape5& s, T* out, std::uint32_t* arg, std::vector<T>& tv,
                std::vector<std::uint32_t>& ti) {
  const std::size_t hw = static_cast<std::size_t>(s.h) * s.w, n = s.spatial();
  tv.resize(2 * n);
  ti.resize(2 * n);
  T* v1 = tv.data();
  T* v2 = tv.data() + n;
  std::uint32_t* i1 = ti.data();
  std::uint32_t* i2 = ti.data() + n;
  // along W: candidate indices are in-plane offsets
  for (std::size_t r = 0; r < static_cast<std::size_t>(s.d) * s.h; ++r) {
    const T* row = in + r * s.w;
    for (int w = 0; w < s.w; ++w) {
      int best = std::max(0, w - 1);
      for (int c = best + 1; c <= std::min(s.w - 1, w + 1); ++c)
        if (row[c] > row[best]) best = c;
      v1[r * s.w + w] = row[best];
      i1[r * s.w + w] = static_cast<std::uint32_t>(r * s.w + best);
    }
  }
  // along H
  for (int d = 0; d < s.d; ++d)
    for (int h = 0; h < s.h; ++h) {
      const int b0 = std::max(0, h - 1), b1 = std::min(s.h - 1, h + 1);
      const std::size_t dst = d * hw + static_cast<std::size_t>(h) * s.w;
      for (int w = 0; w < s.w; ++w) {
        std::size_t best = d * hw + static_cast<std::size_t>(b0) * s.w + w;
        for (int b = b0 + 1; b <= b1; ++b) {
          const std::size_t k = d * hw + static_cast<std::size_t>(b) * s.w + w;
          if (v1[k] > v1[best]) best = k;
        }
        v2[dst + w] = v1[best];
        i2[dst + w] = i1[best];
      }
    }
  // along D
  for (int d = 0; d < s.d; ++d) {
    const int a0 = std::max(0, d - 1), a1 = std::min(s.d - 1, d + 1);
    for (std::size_t j = 0; j < hw; ++j) {
      std::size_t best = a0 * hw + j;
      for (int a = a0 + 1; a <= a1; ++a)
        if (v2[a * hw + j] > v2[best]) best = a * hw + j;
      out[d * hw + j] = v2[best];
      if (arg) arg[d * hw + j] = i2[best];
    }
  }
}

}  // namespace detail

/// 3^3 max pool, stride 1; out-of-bounds positions never win.
template <class T>
Tensor5<T> maxpool3d(const Tensor5<T>& x) {
  const Shape5& s = x.shape;
  Tensor5<T> y(s);
  std::vector<T> tv;
  std::vector<std::uint32_t> ti;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      detail::pool_plane(x.values.data() + x.plane_offset(n, c), s, y.values.data() + y.plane_offset(n, c), nullptr,
                         tv, ti);
  return y;
}

/// Routes each output gradient to its window's first maximum.
template <class T>
void maxpool3d_backward(Tensor5<T>& x, const Tensor5<T>& y) {
  x.ensure_grad();
  const Shape5& s = x.shape;
  std::vector<T> tv, out(s.spatial());
  std::vector<std::uint32_t> ti, arg(s.spatial());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      detail::pool_plane(x.values.data() + x.plane_offset(n, c), s, out.data(), arg.data(), tv, ti);
      double* gx = x.grad.data() + x.plane_offset(n, c);
      const double* gy = y.grad.data() + y.plane_offset(n, c);
      for (std::size_t j = 0; j < s.spatial(); ++j) gx[arg[j]] += gy[j];
    }
}

/// Channel-axis concatenation in argument order.
template <class T>
Tensor5<T> concat_channels(std::span<const Tensor5<T>* const> parts) {
  if (parts.empty()) throw Error("tensor", "concat of zero tensors");
  Shape5 s = parts[0]->shape;
  s.c = 0;
  for (const auto* p : parts) {
    if (p->shape.n != s.n || !p->shape.same_spatial(s))
      throw Error("tensor", "concat batch/spatial mismatch: " + to_string(parts[0]->shape) + " vs " +
                                to_string(p->shape));
    s.c += p->shape.c;
  }
  Tensor5<T> y(s);
  const std::size_t sp = s.spatial();
  for (int n = 0; n < s.n; ++n) {
    int c0 = 0;
    for (const auto* p : parts) {
      std::copy_n(p->values.data() + p->plane_offset(n, 0), p->shape.c * sp,
                  y.values.data() + y.plane_offset(n, c0));
      c0 += p->shape.c;
    }
  }
  return y;
}

template <class T>
Tensor5<T> concat_channels(const Tensor5<T>& a, const Tensor5<T>& b) {
  const Tensor5<T>* parts[] = {&a, &b};
  return concat_channels<T>(parts);
}

/// Splits `y.grad` back onto the parts, accumulating.
template <class T>
void concat_channels_backward(std::span<Tensor5<T>* const> parts, const Tensor5<T>& y) {
  const std::size_t sp = y.shape.spatial();
  for (int n = 0; n < y.shape.n; ++n) {
    int c0 = 0;
    for (auto* p : parts) {
      p->ensure_grad();
      const double* src = y.grad.data() + y.plane_offset(n, c0);
      double* dst = p->grad.data() + p->plane_offset(n, 0);
      for (std::size_t i = 0; i < p->shape.c * sp; ++i) dst[i] += src[i];
      c0 += p->shape.c;
    }
  }
}

template <class T>
void concat_channels_backward(Tensor5<T>& a, Tensor5<T>& b, const Tensor5<T>& y) {
  Tensor5<T>* parts[] = {&a, &b};
  concat_channels_backward<T>(parts, y);
}

/// Slice of channels [c0, c0 + count).
template <class T>
Tensor5<T> slice_channels(const Tensor5<T>& x, int c0, int count) {
  if (c0 < 0 || count < 0 || c0 + count > x.shape.c) throw Error("tensor", "channel slice out of range");
  Shape5 s = x.shape;
  s.c = count;
  Tensor5<T> y(s);
  for (int n = 0; n < s.n; ++n)
    std::copy_n(x.values.data() + x.plane_offset(n, c0), count * s.spatial(),
                y.values.data() + y.plane_offset(n, 0));
  return y;
}

template <class T>
double mse_loss(const Tensor5<T>& pred, const Tensor5<T>& target) {
  if (!(pred.shape == target.shape))
    throw Error("tensor", "mse shape mismatch: " + to_string(pred.shape) + " vs " + to_string(target.shape));
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = static_cast<double>(pred.values[i]) - static_cast<double>(target.values[i]);
    sum += e * e;
  }
  return sum / static_cast<double>(pred.size());
}

/// dL/dpred = scale * 2 (pred - target) / count, accumulated into pred.grad.
template <class T>
void mse_loss_backward(Tensor5<T>& pred, const Tensor5<T>& target, double scale = 1.0) {
  pred.ensure_grad();
  const double k = 2.0 * scale / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    pred.grad[i] += k * (static_cast<double>(pred.values[i]) - static_cast<double>(target.values[i]));
}

}  // namespace svox
