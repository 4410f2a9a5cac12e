#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "svox/model.hpp"
#include "svox/normalization.hpp"
#include "svox/tensor.hpp"
#include "svox/volume.hpp"

namespace svox {

using Voxel = std::array<int, 3>;

/// Patch centers of one oriented atlas: one per headmask voxel, expressed in
/// the reoriented frame.
struct PatchIndex {
  std::vector<Voxel> centers;
  Orientation orientation = Orientation::axial();
  PatchShape patch_shape{};

  std::size_t size() const { return centers.size(); }
};

/// `mask` is in the canonical frame; it is reoriented before enumeration.
/// Centers come out in (z, y, x) ascending order of the reoriented grid.
inline PatchIndex enumerate_centers(const Mask& mask, const Orientation& orientation,
                                    const PatchShape& patch_shape = {}) {
  const Mask m = reorient(mask, orientation);
  PatchIndex idx;
  idx.orientation = orientation;
  idx.patch_shape = patch_shape;
  idx.centers.reserve(m.count());
  for (int z = 0; z < m.dims[2]; ++z)
    for (int y = 0; y < m.dims[1]; ++y)
      for (int x = 0; x < m.dims[0]; ++x)
        if (m.at(x, y, z)) idx.centers.push_back({x, y, z});
  if (idx.centers.empty()) throw Error("sampler", "empty mask");
  return idx;
}

struct PatchBatch {
  Tensor5<float> echo1, echo2, ct;
};

/// Patches are (N, 1, through, in-plane-2, in-plane-1). MR is z-scored, CT is
/// scaled by ct_scale; positions outside the volume are exactly 0 in both.
/// Volumes must already be reoriented to `idx.orientation`.
inline PatchBatch extract_batch(const Volume& echo1, const Volume& echo2, const Volume& ct, const PatchIndex& idx,
                                std::span<const std::size_t> picks, const NormalizationSpec& norm) {
  if (echo1.dims != echo2.dims || echo1.dims != ct.dims) throw Error("sampler", "volume dims disagree");
  const PatchShape& ps = idx.patch_shape;
  const Shape5 shape{static_cast<int>(picks.size()), 1, ps.through_plane, ps.in_plane_2, ps.in_plane_1};
  PatchBatch b{Tensor5<float>(shape), Tensor5<float>(shape), Tensor5<float>(shape)};
  const int rx = ps.in_plane_1 / 2, ry = ps.in_plane_2 / 2, rz = ps.through_plane / 2;
  const double s1 = 1.0 / norm.mr_std[0], s2 = 1.0 / norm.mr_std[1];
  for (std::size_t n = 0; n < picks.size(); ++n) {
    if (picks[n] >= idx.size())
      throw Error("sampler", "pick " + std::to_string(picks[n]) + " out of range (" + std::to_string(idx.size()) +
                                 " centers)");
    const Voxel& c = idx.centers[picks[n]];
    for (int a = 0; a < ps.through_plane; ++a)
      for (int r = 0; r < ps.in_plane_2; ++r)
        for (int q = 0; q < ps.in_plane_1; ++q) {
          const int x = c[0] + q - rx, y = c[1] + r - ry, z = c[2] + a - rz;
          if (!echo1.contains(x, y, z)) continue;
          const std::size_t vi = echo1.index(x, y, z);
          const std::size_t ti = b.echo1.offset(static_cast<int>(n), 0, a, r, q);
          b.echo1.values[ti] = static_cast<float>((echo1.data[vi] - norm.mr_mean[0]) * s1);
          b.echo2.values[ti] = static_cast<float>((echo2.data[vi] - norm.mr_mean[1]) * s2);
          b.ct.values[ti] = static_cast<float>(ct.data[vi] * norm.ct_scale);
        }
  }
  return b;
}

struct Split {
  std::vector<std::size_t> train, val;
};

/// Uniform shuffle of [0, n) from `seed`; the first ceil(0.75 n) go to training.
inline Split split_train_val(std::size_t n, std::uint64_t seed) {
  if (n < 4) throw Error("sampler", "need at least 4 patch centers to split, have " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = (3 * n + 3) / 4;
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return s;
}

inline Split split_train_val(const PatchIndex& idx, std::uint64_t seed) { return split_train_val(idx.size(), seed); }

}  // namespace svox
