#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "svox/error.hpp"

namespace svox {

using Dims = std::array<int, 3>;
using Spacing = std::array<double, 3>;

inline std::size_t voxel_count(const Dims& d) {
  return static_cast<std::size_t>(d[0]) * d[1] * d[2];
}

enum class Units { arbitrary_mr, hounsfield };

inline std::string_view to_string(Units u) {
  return u == Units::hounsfield ? "hounsfield" : "arbitrary_mr";
}

inline Units units_from_string(std::string_view s) {
  if (s == "hounsfield") return Units::hounsfield;
  if (s == "arbitrary_mr") return Units::arbitrary_mr;
  throw Error("volume", "unknown intensity units '" + std::string(s) + "'");
}

enum class OrientationTag { axial, coronal, sagittal };

/// Maps canonical axes onto (in-plane-1, in-plane-2, through-plane): the
/// reoriented volume's axis a is the canonical axis `axes[a]`.
struct Orientation {
  OrientationTag tag = OrientationTag::axial;
  std::array<int, 3> axes{0, 1, 2};

  static Orientation axial() { return {OrientationTag::axial, {0, 1, 2}}; }
  static Orientation coronal() { return {OrientationTag::coronal, {0, 2, 1}}; }
  static Orientation sagittal() { return {OrientationTag::sagittal, {1, 2, 0}}; }

  static Orientation from_tag(OrientationTag t) {
    switch (t) {
      case OrientationTag::coronal: return coronal();
      case OrientationTag::sagittal: return sagittal();
      default: return axial();
    }
  }

  bool is_bijection() const {
    std::array<bool, 3> seen{};
    for (int a : axes) {
      if (a < 0 || a > 2 || seen[a]) return false;
      seen[a] = true;
    }
    return true;
  }

  Orientation inverse() const {
    Orientation inv{tag, {}};
    for (int a = 0; a < 3; ++a) inv.axes[axes[a]] = a;
    return inv;
  }

  friend bool operator==(const Orientation&, const Orientation&) = default;
};

inline std::string_view to_string(OrientationTag t) {
  switch (t) {
    case OrientationTag::coronal: return "coronal";
    case OrientationTag::sagittal: return "sagittal";
    default: return "axial";
  }
}

inline OrientationTag orientation_from_string(std::string_view s) {
  if (s == "axial") return OrientationTag::axial;
  if (s == "coronal") return OrientationTag::coronal;
  if (s == "sagittal") return OrientationTag::sagittal;
  throw Error("volume", "unknown orientation '" + std::string(s) + "'");
}

inline constexpr std::array<OrientationTag, 3> kAllOrientations{
    OrientationTag::axial, OrientationTag::coronal, OrientationTag::sagittal};

/// 3-D scalar grid, X-fastest.
struct Volume {
  Dims dims{1, 1, 1};
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<float> data;
  Units units = Units::arbitrary_mr;
  OrientationTag orientation = OrientationTag::axial;

  Volume() : data(1, 0.0f) {}
  Volume(Dims d, Spacing s, Units u = Units::arbitrary_mr, float fill = 0.0f)
      : dims(d), spacing(s), data(voxel_count(d), fill), units(u) {}

  std::size_t size() const { return data.size(); }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }
  float at(int x, int y, int z) const { return data[index(x, y, z)]; }

  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] <= 0) throw Error("volume", "dims must be positive");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw Error("volume", "spacing must be positive and finite");
    }
    if (data.size() != voxel_count(dims))
      throw Error("volume", "data length does not match dims");
    for (float v : data)
      if (!std::isfinite(v)) throw Error("volume", "volume contains non-finite values");
  }

  friend bool operator==(const Volume&, const Volume&) = default;
};

struct Mask {
  Dims dims{1, 1, 1};
  std::vector<std::uint8_t> bits;

  Mask() : bits(1, 0) {}
  explicit Mask(Dims d, bool fill = false) : dims(d), bits(voxel_count(d), fill ? 1 : 0) {}

  std::size_t size() const { return bits.size(); }
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  bool at(int x, int y, int z) const { return bits[index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v) { bits[index(x, y, z)] = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(),
                                                   [](std::uint8_t b) { return b != 0; }));
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

/// Nonzero voxels of `v` become mask voxels.
inline Mask mask_from_volume(const Volume& v) {
  Mask m(v.dims);
  for (std::size_t i = 0; i < v.size(); ++i) m.bits[i] = v.data[i] != 0.0f ? 1 : 0;
  return m;
}

inline Volume volume_from_mask(const Mask& m, Spacing spacing = {1.0, 1.0, 1.0}) {
  Volume v(m.dims, spacing);
  for (std::size_t i = 0; i < m.size(); ++i) v.data[i] = m.bits[i] ? 1.0f : 0.0f;
  return v;
}

namespace detail {

template <class T>
std::vector<T> permute_grid(const std::vector<T>& src, const Dims& src_dims,
                            const std::array<int, 3>& axes, Dims& out_dims) {
  for (int a = 0; a < 3; ++a) out_dims[a] = src_dims[axes[a]];
  std::array<std::size_t, 3> src_stride{1, static_cast<std::size_t>(src_dims[0]),
                                        static_cast<std::size_t>(src_dims[0]) * src_dims[1]};
  // stride in the source for a unit step along each output axis
  const std::size_t s0 = src_stride[axes[0]], s1 = src_stride[axes[1]], s2 = src_stride[axes[2]];
  std::vector<T> out(src.size());
  std::size_t o = 0;
  for (int k = 0; k < out_dims[2]; ++k)
    for (int j = 0; j < out_dims[1]; ++j) {
      std::size_t base = k * s2 + j * s1;
      for (int i = 0; i < out_dims[0]; ++i) out[o++] = src[base + i * s0];
    }
  return out;
}

}  // namespace detail

/// Pure axis permutation so the through-plane axis of `o` becomes the last
/// axis. Dims and spacing are permuted along with the data.
inline Volume reorient(const Volume& v, const Orientation& o) {
  if (!o.is_bijection()) throw Error("volume", "orientation is not an axis permutation");
  Volume out;
  out.data = detail::permute_grid(v.data, v.dims, o.axes, out.dims);
  for (int a = 0; a < 3; ++a) out.spacing[a] = v.spacing[o.axes[a]];
  out.units = v.units;
  out.orientation = o.tag;
  return out;
}

inline Mask reorient(const Mask& m, const Orientation& o) {
  if (!o.is_bijection()) throw Error("volume", "orientation is not an axis permutation");
  Mask out;
  out.bits = detail::permute_grid(m.bits, m.dims, o.axes, out.dims);
  return out;
}

/// Undo `reorient(., o)`; the result is back in the canonical (axial) frame.
inline Volume inverse_reorient(const Volume& v, const Orientation& o) {
  Volume out = reorient(v, o.inverse());
  out.orientation = OrientationTag::axial;
  return out;
}

inline Mask inverse_reorient(const Mask& m, const Orientation& o) {
  return reorient(m, o.inverse());
}

// ---------------------------------------------------------------------------
// Otsu

namespace detail {

// Compares a/b against c/d exactly (b, d > 0) by continued-fraction descent.
inline int compare_fractions(unsigned __int128 a, unsigned __int128 b, unsigned __int128 c,
                             unsigned __int128 d) {
  int sign = 1;
  for (;;) {
    const unsigned __int128 qa = a / b, qc = c / d;
    if (qa != qc) return qa < qc ? -sign : sign;
    a -= qa * b;
    c -= qc * d;
    if (a == 0 && c == 0) return 0;
    if (a == 0) return -sign;
    if (c == 0) return sign;
    // a/b vs c/d with both in (0,1)  <=>  reversed comparison of b/a vs d/c
    std::swap(a, b);
    std::swap(c, d);
    sign = -sign;
  }
}

}  // namespace detail

/// Otsu cut over an integer histogram. Returns k in [1, bins-1]: bins [0,k)
/// form the background class. Between-class variance is compared exactly in
/// integer arithmetic (valid for totals below 2^28 samples at 256 bins) and
/// ties go to the smallest k.
inline std::size_t otsu_cut(std::span<const std::uint64_t> hist) {
  const std::size_t bins = hist.size();
  if (bins < 2) throw Error("volume", "otsu needs at least 2 bins");
  std::uint64_t total_n = 0, total_s = 0;
  for (std::size_t i = 0; i < bins; ++i) {
    total_n += hist[i];
    total_s += hist[i] * i;
  }
  std::size_t best_k = 0;
  unsigned __int128 best_num = 0, best_den = 1;
  std::uint64_t n0 = 0, s0 = 0;
  for (std::size_t k = 1; k < bins; ++k) {
    n0 += hist[k - 1];
    s0 += hist[k - 1] * (k - 1);
    const std::uint64_t n1 = total_n - n0, s1 = total_s - s0;
    if (n0 == 0 || n1 == 0) continue;
    // w0*w1*(mu0-mu1)^2 * N^2 = (s0*n1 - s1*n0)^2 / (n0*n1)
    const __int128 diff = static_cast<__int128>(s0) * n1 - static_cast<__int128>(s1) * n0;
    const unsigned __int128 mag = diff < 0 ? -diff : diff;
    const unsigned __int128 num = mag * mag;
    const unsigned __int128 den = static_cast<unsigned __int128>(n0) * n1;
    if (best_k == 0 || detail::compare_fractions(num, den, best_num, best_den) > 0) {
      best_k = k;
      best_num = num;
      best_den = den;
    }
  }
  if (best_k == 0) throw Error("volume", "degenerate histogram");
  return best_k;
}

/// Histogram of `v` with `bins` equal-width bins over [min, max].
inline std::vector<std::uint64_t> histogram(const Volume& v, std::size_t bins, float& lo, float& hi) {
  const auto [mn, mx] = std::minmax_element(v.data.begin(), v.data.end());
  lo = *mn;
  hi = *mx;
  std::vector<std::uint64_t> hist(bins, 0);
  if (!(hi > lo)) return hist;
  const double scale = static_cast<double>(bins) / (static_cast<double>(hi) - lo);
  for (float x : v.data) {
    auto b = static_cast<std::size_t>((static_cast<double>(x) - lo) * scale);
    hist[std::min(b, bins - 1)]++;
  }
  return hist;
}

/// Bin-edge threshold maximizing between-class variance.
inline float otsu_threshold(const Volume& v, std::size_t bins = 256) {
  if (bins < 2) throw Error("volume", "otsu needs at least 2 bins");
  float lo = 0, hi = 0;
  const auto hist = histogram(v, bins, lo, hi);
  if (!(hi > lo)) throw Error("volume", "degenerate histogram");
  const std::size_t k = otsu_cut(hist);
  return static_cast<float>(lo + (static_cast<double>(hi) - lo) * static_cast<double>(k) / bins);
}

// ---------------------------------------------------------------------------
// Connected components (6-connectivity)

namespace detail {

template <class Visit>
void flood6(const Dims& d, std::size_t seed, Visit&& accept) {
  std::deque<std::size_t> queue{seed};
  const std::size_t sx = 1, sy = d[0], sz = static_cast<std::size_t>(d[0]) * d[1];
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    const int x = static_cast<int>(i % d[0]);
    const int y = static_cast<int>((i / d[0]) % d[1]);
    const int z = static_cast<int>(i / sz);
    if (x > 0 && accept(i - sx)) queue.push_back(i - sx);
    if (x + 1 < d[0] && accept(i + sx)) queue.push_back(i + sx);
    if (y > 0 && accept(i - sy)) queue.push_back(i - sy);
    if (y + 1 < d[1] && accept(i + sy)) queue.push_back(i + sy);
    if (z > 0 && accept(i - sz)) queue.push_back(i - sz);
    if (z + 1 < d[2] && accept(i + sz)) queue.push_back(i + sz);
  }
}

}  // namespace detail

/// Labels 6-connected foreground components (labels start at 1, in scan
/// order). Returns the label image; `sizes[l]` is the voxel count of label l.
inline std::vector<std::uint32_t> label_components(const Mask& m, std::vector<std::size_t>& sizes) {
  std::vector<std::uint32_t> labels(m.size(), 0);
  sizes.assign(1, 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m.bits[i] || labels[i]) continue;
    const auto label = static_cast<std::uint32_t>(sizes.size());
    labels[i] = label;
    std::size_t n = 1;
    detail::flood6(m.dims, i, [&](std::size_t j) {
      if (!m.bits[j] || labels[j]) return false;
      labels[j] = label;
      ++n;
      return true;
    });
    sizes.push_back(n);
  }
  return labels;
}

inline Mask largest_component(const Mask& m) {
  std::vector<std::size_t> sizes;
  const auto labels = label_components(m, sizes);
  std::uint32_t best = 0;
  for (std::uint32_t l = 1; l < sizes.size(); ++l)
    if (sizes[l] > sizes[best]) best = l;
  Mask out(m.dims);
  if (best == 0) return out;
  for (std::size_t i = 0; i < m.size(); ++i) out.bits[i] = labels[i] == best ? 1 : 0;
  return out;
}

/// Background regions with no 6-connected path to the volume boundary are
/// set to foreground.
inline Mask fill_holes(const Mask& m) {
  const Dims& d = m.dims;
  std::vector<std::uint8_t> outside(m.size(), 0);
  auto seed = [&](int x, int y, int z) {
    const std::size_t i = m.index(x, y, z);
    if (m.bits[i] || outside[i]) return;
    outside[i] = 1;
    detail::flood6(d, i, [&](std::size_t j) {
      if (m.bits[j] || outside[j]) return false;
      outside[j] = 1;
      return true;
    });
  };
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        const bool border = x == 0 || y == 0 || z == 0 || x == d[0] - 1 || y == d[1] - 1 ||
                            z == d[2] - 1;
        if (border) seed(x, y, z);
      }
  Mask out(d);
  for (std::size_t i = 0; i < m.size(); ++i) out.bits[i] = outside[i] ? 0 : 1;
  return out;
}

/// Otsu foreground, reduced to its largest 6-connected component with
/// enclosed cavities filled.
inline Mask compute_headmask(const Volume& v, std::size_t bins = 256) {
  const float t = otsu_threshold(v, bins);
  Mask raw(v.dims);
  for (std::size_t i = 0; i < v.size(); ++i) raw.bits[i] = v.data[i] >= t ? 1 : 0;
  return fill_holes(largest_component(raw));
}

/// Copy of `v` with voxels outside `m` set to `fill`.
inline Volume apply_mask(const Volume& v, const Mask& m, float fill = 0.0f) {
  if (v.dims != m.dims) throw Error("volume", "mask dims do not match volume");
  Volume out = v;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!m.bits[i]) out.data[i] = fill;
  return out;
}

}  // namespace svox
