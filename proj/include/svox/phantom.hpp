#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "svox/volume.hpp"

namespace svox {

enum class Tissue : std::uint8_t { background = 0, bone = 1, soft_tissue = 2, fluid = 3, lesion = 4 };
inline constexpr int kTissueCount = 5;

inline const char* to_string(Tissue t) {
  switch (t) {
    case Tissue::bone: return "bone";
    case Tissue::soft_tissue: return "soft_tissue";
    case Tissue::fluid: return "fluid";
    case Tissue::lesion: return "lesion";
    default: return "background";
  }
}

struct TissueParams {
  double ute1_mean = 0.0;
  double ute2_mean = 0.0;
  double ct_hu_mean = 0.0;
  double noise_sigma = 0.0;
};

/// Synthetic head: scalp (soft tissue) around a bone shell around a brain
/// (soft tissue) holding two fluid-filled ventricles and an optional lesion.
/// Bone is dark on both echoes but bright on CT; fluid is as dark as bone on
/// echo 2, so CT is not a monotone function of either echo.
struct PhantomSpec {
  Dims dims{64, 64, 64};
  Spacing spacing{1.56, 1.56, 1.56};
  std::uint64_t seed = 42;
  std::array<TissueParams, kTissueCount> tissues{{
      {0.0, 0.0, -1000.0, 0.0},      // background
      {300.0, 30.0, 1200.0, 15.0},   // bone
      {800.0, 600.0, 40.0, 15.0},    // soft tissue
      {150.0, 40.0, 10.0, 15.0},     // fluid
      {550.0, 350.0, 70.0, 15.0},    // lesion
  }};
  /// Head semi-axes as fractions of dims.
  std::array<double, 3> head_axes{0.40, 0.44, 0.38};
  /// Layer thicknesses in voxels at 64^3, scaled with the smallest dim.
  double scalp_thickness = 2.0;
  double bone_thickness = 3.0;
  bool lesion = true;
  double lesion_radius = 4.0;
  /// Relative jitter of the head axes across seeds.
  double jitter = 0.08;

  const TissueParams& tissue(Tissue t) const { return tissues[static_cast<int>(t)]; }
};

inline void to_json(nlohmann::json& j, const PhantomSpec& s) {
  nlohmann::json tissues = nlohmann::json::object();
  for (int t = 0; t < kTissueCount; ++t) {
    const auto& p = s.tissues[t];
    tissues[to_string(static_cast<Tissue>(t))] = {
        {"ute1_mean", p.ute1_mean}, {"ute2_mean", p.ute2_mean}, {"ct_hu_mean", p.ct_hu_mean}, {"noise_sigma", p.noise_sigma}};
  }
  j = nlohmann::json{{"dims", s.dims},
                     {"spacing_mm", s.spacing},
                     {"seed", s.seed},
                     {"tissues", tissues},
                     {"head_axes", s.head_axes},
                     {"scalp_thickness", s.scalp_thickness},
                     {"bone_thickness", s.bone_thickness},
                     {"lesion", s.lesion},
                     {"lesion_radius", s.lesion_radius},
                     {"jitter", s.jitter}};
}

struct PhantomPair {
  Volume echo1, echo2, ct;
  Mask mask;
  std::vector<std::uint8_t> class_map;

  Tissue tissue_at(std::size_t i) const { return static_cast<Tissue>(class_map[i]); }
};

struct Ellipsoid {
  std::array<double, 3> center{}, axes{1, 1, 1};
  bool contains(double x, double y, double z) const {
    const double a = (x - center[0]) / axes[0], b = (y - center[1]) / axes[1], c = (z - center[2]) / axes[2];
    return a * a + b * b + c * c <= 1.0;
  }
  Ellipsoid shrunk(double by) const {
    Ellipsoid e = *this;
    for (double& a : e.axes) a -= by;
    return e;
  }
};

/// Deterministic per seed: geometry is jittered from the seed, then every
/// voxel gets its class mean plus Gaussian noise (echo1, echo2, ct order).
inline PhantomPair generate(const PhantomSpec& spec) {
  for (int a = 0; a < 3; ++a)
    if (spec.dims[a] < 32) throw Error("phantom", "phantom dims must be >= 32 per axis");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double scale = std::min({spec.dims[0], spec.dims[1], spec.dims[2]}) / 64.0;

  Ellipsoid head;
  for (int a = 0; a < 3; ++a) {
    head.center[a] = (spec.dims[a] - 1) / 2.0 + 1.5 * scale * unit(rng);
    head.axes[a] = spec.head_axes[a] * spec.dims[a] * (1.0 + spec.jitter * unit(rng));
  }
  const Ellipsoid bone_outer = head.shrunk(spec.scalp_thickness * scale);
  const Ellipsoid brain = bone_outer.shrunk(spec.bone_thickness * scale);

  std::array<Ellipsoid, 2> ventricles;
  for (int v = 0; v < 2; ++v) {
    const double side = v == 0 ? -1.0 : 1.0;
    ventricles[v].center = {brain.center[0] + side * brain.axes[0] * (0.22 + 0.05 * unit(rng)),
                            brain.center[1] + brain.axes[1] * 0.1 * unit(rng),
                            brain.center[2] + brain.axes[2] * 0.1 * unit(rng)};
    ventricles[v].axes = {brain.axes[0] * (0.12 + 0.02 * unit(rng)), brain.axes[1] * (0.35 + 0.05 * unit(rng)),
                          brain.axes[2] * (0.25 + 0.05 * unit(rng))};
  }
  // lesion center placed in the anterior half of the brain, off the midline
  Ellipsoid lesion;
  const double lr = spec.lesion_radius * scale;
  lesion.axes = {lr, lr, lr};
  lesion.center = {brain.center[0] + brain.axes[0] * 0.45 * unit(rng),
                   brain.center[1] + brain.axes[1] * (0.55 + 0.1 * unit(rng)),
                   brain.center[2] + brain.axes[2] * 0.3 * unit(rng)};

  PhantomPair p;
  p.echo1 = Volume(spec.dims, spec.spacing, Units::arbitrary_mr);
  p.echo2 = Volume(spec.dims, spec.spacing, Units::arbitrary_mr);
  p.ct = Volume(spec.dims, spec.spacing, Units::hounsfield);
  p.mask = Mask(spec.dims);
  p.class_map.assign(voxel_count(spec.dims), 0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t i = 0;
  for (int z = 0; z < spec.dims[2]; ++z)
    for (int y = 0; y < spec.dims[1]; ++y)
      for (int x = 0; x < spec.dims[0]; ++x, ++i) {
        Tissue t = Tissue::background;
        if (head.contains(x, y, z)) {
          if (!bone_outer.contains(x, y, z))
            t = Tissue::soft_tissue;
          else if (!brain.contains(x, y, z))
            t = Tissue::bone;
          else if (spec.lesion && lesion.contains(x, y, z))
            t = Tissue::lesion;
          else if (ventricles[0].contains(x, y, z) || ventricles[1].contains(x, y, z))
            t = Tissue::fluid;
          else
            t = Tissue::soft_tissue;
        }
        const TissueParams& tp = spec.tissue(t);
        const double n1 = noise(rng), n2 = noise(rng), n3 = noise(rng);
        p.echo1.data[i] = static_cast<float>(tp.ute1_mean + tp.noise_sigma * n1);
        p.echo2.data[i] = static_cast<float>(tp.ute2_mean + tp.noise_sigma * n2);
        p.ct.data[i] = static_cast<float>(tp.ct_hu_mean + tp.noise_sigma * n3);
        p.class_map[i] = static_cast<std::uint8_t>(t);
        p.mask.bits[i] = t != Tissue::background ? 1 : 0;
      }
  return p;
}

/// `n` subjects seeded base_seed, base_seed+1, ...; subject 0 is the atlas.
inline std::vector<PhantomPair> generate_corpus(int n, std::uint64_t base_seed, PhantomSpec base = {}) {
  if (n < 2) throw Error("phantom", "a corpus needs at least 2 subjects");
  std::vector<PhantomPair> out;
  for (int i = 0; i < n; ++i) {
    base.seed = base_seed + static_cast<std::uint64_t>(i);
    out.push_back(generate(base));
  }
  return out;
}

}  // namespace svox
