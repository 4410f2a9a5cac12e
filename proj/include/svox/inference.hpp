#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <vector>

#include "svox/model.hpp"
#include "svox/parallel.hpp"
#include "svox/trainer.hpp"
#include "svox/volume.hpp"

namespace svox {

namespace detail {

inline std::vector<float> normalize_channel(const Volume& v, double mean, double std) {
  std::vector<float> out(v.size());
  const double s = 1.0 / std;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>((v.data[i] - mean) * s);
  return out;
}

// (1, 1, depth, Y, X) slab of `depth` slices centered on slice z; slices
// outside the volume are zero.
inline Tensor5<float> slab(const std::vector<float>& data, const Dims& d, int z, int depth) {
  Tensor5<float> t(Shape5{1, 1, depth, d[1], d[0]});
  const std::size_t plane = static_cast<std::size_t>(d[0]) * d[1];
  for (int a = 0; a < depth; ++a) {
    const int zz = z + a - depth / 2;
    if (zz < 0 || zz >= d[2]) continue;
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(zz * plane), plane,
                t.values.begin() + static_cast<std::ptrdiff_t>(a * plane));
  }
  return t;
}

}  // namespace detail

/// Whole-volume synthesis with one orientation model. Every slice of the
/// reoriented volume is predicted from the slab of patch-depth slices
/// centered on it, keeping the slab's center output slice.
inline Volume predict_volume(const Network<float>& net, const NormalizationSpec& norm, const Orientation& orientation,
                             const Volume& echo1, const Volume& echo2, int threads = 0) {
  if (echo1.dims != echo2.dims) throw Error("inference", "echo dims do not match");
  norm.validate();
  const Volume e1 = reorient(echo1, orientation);
  const Volume e2 = reorient(echo2, orientation);
  const auto n1 = detail::normalize_channel(e1, norm.mr_mean[0], norm.mr_std[0]);
  const auto n2 = detail::normalize_channel(e2, norm.mr_mean[1], norm.mr_std[1]);
  const Dims& d = e1.dims;
  const int depth = net.config.patch_shape.through_plane;
  const std::size_t plane = static_cast<std::size_t>(d[0]) * d[1];

  Volume out(d, e1.spacing, Units::hounsfield);
  out.orientation = orientation.tag;
  const double inv_scale = 1.0 / norm.ct_scale;
  parallel_for(0, static_cast<std::size_t>(d[2]), resolve_threads(threads), [&](std::size_t z, int) {
    const Tensor5<float> y = forward_full(net, detail::slab(n1, d, static_cast<int>(z), depth),
                                          detail::slab(n2, d, static_cast<int>(z), depth));
    const float* center = y.values.data() + static_cast<std::size_t>(depth / 2) * plane;
    float* dst = out.data.data() + z * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>(center[i] * inv_scale);
  });
  Volume canonical = inverse_reorient(out, orientation);
  canonical.spacing = echo1.spacing;
  return canonical;
}

struct EnsembleMember {
  Network<float> network;
  NormalizationSpec normalization;
  Orientation orientation;
};

struct Ensemble {
  std::vector<EnsembleMember> members;

  void validate() const {
    if (members.size() != 3) throw Error("inference", "an ensemble needs exactly three members");
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j)
        if (members[i].orientation.tag == members[j].orientation.tag)
          throw Error("inference", "ensemble orientations must be pairwise distinct");
  }

  /// Loads model_<axial|coronal|sagittal>.svoxnet from `dir`.
  static Ensemble load(const std::filesystem::path& dir) {
    Ensemble e;
    for (OrientationTag t : kAllOrientations) {
      const auto path = dir / model_filename(t);
      if (!std::filesystem::exists(path)) throw Error("inference", "missing model file '" + path.string() + "'");
      ModelFile mf = load_model(path);
      e.members.push_back({std::move(mf.network), mf.metadata.normalization, mf.metadata.orientation});
    }
    e.validate();
    return e;
  }
};

/// Voxelwise mean of equally-shaped volumes: values are sorted per voxel and
/// summed in 64-bit.
inline Volume average_volumes(std::span<const Volume> vols) {
  if (vols.empty()) throw Error("inference", "nothing to average");
  Volume out = vols[0];
  std::vector<float> vals(vols.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < vols.size(); ++k) {
      if (vols[k].dims != out.dims) throw Error("inference", "cannot average volumes of different dims");
      vals[k] = vols[k].data[i];
    }
    std::sort(vals.begin(), vals.end());
    double s = 0.0;
    for (float v : vals) s += v;
    out.data[i] = static_cast<float>(s / static_cast<double>(vals.size()));
  }
  return out;
}

inline std::vector<Volume> predict_members(const Ensemble& e, const Volume& echo1, const Volume& echo2,
                                           int threads = 0) {
  e.validate();
  std::vector<Volume> preds;
  for (const auto& m : e.members)
    preds.push_back(predict_volume(m.network, m.normalization, m.orientation, echo1, echo2, threads));
  return preds;
}

inline Volume predict_ensemble(const Ensemble& e, const Volume& echo1, const Volume& echo2, int threads = 0) {
  return average_volumes(predict_members(e, echo1, echo2, threads));
}

}  // namespace svox
