#pragma once

#include <array>
#include <cmath>

#include <json.hpp>

#include "svox/error.hpp"
#include "svox/volume.hpp"

namespace svox {

/// Intensity normalization shared by training and inference: z-scored MR
/// channels (statistics inside the headmask) and CT multiplied by ct_scale.
struct NormalizationSpec {
  std::array<double, 2> mr_mean{0.0, 0.0};
  std::array<double, 2> mr_std{1.0, 1.0};
  double ct_scale = 1.0 / 1000.0;

  void validate() const {
    for (int c = 0; c < 2; ++c)
      if (!(mr_std[c] > 0.0) || !std::isfinite(mr_mean[c]))
        throw Error("sampler", "normalization requires finite mean and positive std");
    if (!(ct_scale > 0.0)) throw Error("sampler", "ct_scale must be positive");
  }

  friend bool operator==(const NormalizationSpec&, const NormalizationSpec&) = default;
};

inline void to_json(nlohmann::json& j, const NormalizationSpec& n) {
  j = nlohmann::json{{"mr_mean", n.mr_mean}, {"mr_std", n.mr_std}, {"ct_scale", n.ct_scale}};
}

inline void from_json(const nlohmann::json& j, NormalizationSpec& n) {
  j.at("mr_mean").get_to(n.mr_mean);
  j.at("mr_std").get_to(n.mr_std);
  j.at("ct_scale").get_to(n.ct_scale);
}

/// Mean and population std of `v` over the voxels of `m`.
inline std::array<double, 2> masked_mean_std(const Volume& v, const Mask& m) {
  if (v.dims != m.dims) throw Error("sampler", "mask dims do not match volume");
  double sum = 0.0, n = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (m.bits[i]) {
      sum += v.data[i];
      n += 1.0;
    }
  if (n == 0.0) throw Error("sampler", "empty mask");
  const double mean = sum / n;
  double ss = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (m.bits[i]) {
      const double e = v.data[i] - mean;
      ss += e * e;
    }
  return {mean, std::sqrt(ss / n)};
}

inline NormalizationSpec compute_normalization(const Volume& echo1, const Volume& echo2, const Mask& mask,
                                               double ct_scale = 1.0 / 1000.0) {
  NormalizationSpec n;
  const auto a = masked_mean_std(echo1, mask);
  const auto b = masked_mean_std(echo2, mask);
  n.mr_mean = {a[0], b[0]};
  n.mr_std = {a[1], b[1]};
  n.ct_scale = ct_scale;
  n.validate();
  return n;
}

}  // namespace svox
