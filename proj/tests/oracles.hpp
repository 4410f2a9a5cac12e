#pragma once

// Independent reference implementations used only by the tests. None of
// these share code paths with the library routines they check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "svox/tensor.hpp"

namespace svox::oracle {

/// Direct nested-loop "same" convolution with bounds checks per tap.
template <class T>
Tensor5<double> naive_conv3d(const Tensor5<T>& x, const ConvParams<T>& p) {
  const Shape5 s = x.shape;
  Tensor5<double> y(Shape5{s.n, p.c_out, s.d, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int co = 0; co < p.c_out; ++co)
      for (int d = 0; d < s.d; ++d)
        for (int h = 0; h < s.h; ++h)
          for (int w = 0; w < s.w; ++w) {
            double acc = p.bias[co];
            for (int ci = 0; ci < p.c_in; ++ci)
              for (int a = 0; a < p.kd; ++a)
                for (int b = 0; b < p.kh; ++b)
                  for (int c = 0; c < p.kw; ++c) {
                    const int dd = d + a - p.kd / 2, hh = h + b - p.kh / 2, ww = w + c - p.kw / 2;
                    if (dd < 0 || hh < 0 || ww < 0 || dd >= s.d || hh >= s.h || ww >= s.w) continue;
                    const std::size_t wi = (((static_cast<std::size_t>(co) * p.c_in + ci) * p.kd + a) * p.kh + b) * p.kw + c;
                    acc += static_cast<double>(p.weights[wi]) * x.at(n, ci, dd, hh, ww);
                  }
            y.at(n, co, d, h, w) = acc;
          }
  return y;
}

/// Max over the in-bounds 3^3 neighborhood.
template <class T>
Tensor5<double> naive_maxpool3d(const Tensor5<T>& x) {
  const Shape5 s = x.shape;
  Tensor5<double> y(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int d = 0; d < s.d; ++d)
        for (int h = 0; h < s.h; ++h)
          for (int w = 0; w < s.w; ++w) {
            double m = -std::numeric_limits<double>::infinity();
            for (int a = -1; a <= 1; ++a)
              for (int b = -1; b <= 1; ++b)
                for (int e = -1; e <= 1; ++e) {
                  const int dd = d + a, hh = h + b, ww = w + e;
                  if (dd < 0 || hh < 0 || ww < 0 || dd >= s.d || hh >= s.h || ww >= s.w) continue;
                  m = std::max(m, static_cast<double>(x.at(n, c, dd, hh, ww)));
                }
            y.at(n, c, d, h, w) = m;
          }
  return y;
}

/// Exhaustive Otsu: every cut k in [1, bins-1] is scored from scratch by
/// between-class variance w0*w1*(mu0-mu1)^2 using exact rational comparison
/// (counts small enough for 128-bit cross multiplication). Lowest k wins ties.
inline std::size_t brute_force_otsu(const std::vector<std::uint64_t>& hist) {
  std::size_t best = 0;
  __int128 best_num = 0, best_den = 1;
  for (std::size_t k = 1; k < hist.size(); ++k) {
    __int128 n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (std::size_t i = 0; i < hist.size(); ++i) {
      if (i < k) {
        n0 += hist[i];
        s0 += static_cast<__int128>(hist[i]) * i;
      } else {
        n1 += hist[i];
        s1 += static_cast<__int128>(hist[i]) * i;
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    // (mu0 - mu1)^2 * n0 * n1 / N^2 ~ (s0*n1 - s1*n0)^2 / (n0*n1)
    const __int128 diff = s0 * n1 - s1 * n0;
    const __int128 num = diff * diff, den = n0 * n1;
    if (best == 0 || num * best_den > best_num * den) {
      best = k;
      best_num = num;
      best_den = den;
    }
  }
  return best;
}

/// Ten-line Adam recurrence in double.
struct AdamShadow {
  double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& theta, const std::vector<double>& g) {
    if (m.empty()) m.assign(theta.size(), 0.0), v.assign(theta.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      theta[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

/// Two-sided exact signed-rank p by enumerating all 2^n sign patterns.
inline double brute_force_wilcoxon(const std::vector<double>& diffs) {
  std::vector<double> d;
  for (double x : diffs)
    if (x != 0.0) d.push_back(x);
  const std::size_t n = d.size();
  // average ranks of |d|, computed by counting
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::fabs(d[j]) < std::fabs(d[i])) less += 1;
      if (std::fabs(d[j]) == std::fabs(d[i])) equal += 1;
    }
    rank[i] = less + (equal + 1) / 2.0;
  }
  double total = 0, observed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += rank[i];
    if (d[i] > 0) observed += rank[i];
  }
  const double mean = total / 2;
  const double obs_dev = std::fabs(observed - mean);
  std::uint64_t extreme = 0;
  for (std::uint64_t pattern = 0; pattern < (std::uint64_t{1} << n); ++pattern) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (pattern >> i & 1) w += rank[i];
    if (std::fabs(w - mean) >= obs_dev - 1e-9) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(std::uint64_t{1} << n);
}

/// Central difference of f at x[i] with step h (x restored afterwards).
inline double central_difference(const std::function<double()>& f, double& xi, double h) {
  const double saved = xi;
  xi = saved + h;
  const double fp = f();
  xi = saved - h;
  const double fm = f();
  xi = saved;
  return (fp - fm) / (2 * h);
}

/// Relative error as used by the gradient suite.
inline double relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(std::fabs(analytic) + std::fabs(numeric), 1e-30);
}

template <class T>
Tensor5<T> random_tensor(Shape5 s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor5<T> t(s);
  for (auto& v : t.values) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
ConvParams<T> random_conv(int co, int ci, int kd, int kh, int kw, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ConvParams<T> p(co, ci, kd, kh, kw);
  for (auto& w : p.weights) w = static_cast<T>(u(rng));
  for (auto& b : p.bias) b = static_cast<T>(u(rng));
  return p;
}

}  // namespace svox::oracle
