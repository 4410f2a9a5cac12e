#pragma once

#include <array>
#include <cmath>

#include "svox/volume.hpp"

namespace svox {

/// Per-voxel affine map ct = a*echo1 + b*echo2 + c.
struct LinearBaseline {
  double a = 0.0, b = 0.0, c = 0.0;

  Volume apply(const Volume& echo1, const Volume& echo2) const {
    if (echo1.dims != echo2.dims) throw Error("baseline", "echo dims do not match");
    Volume out(echo1.dims, echo1.spacing, Units::hounsfield);
    for (std::size_t i = 0; i < out.size(); ++i)
      out.data[i] = static_cast<float>(a * echo1.data[i] + b * echo2.data[i] + c);
    return out;
  }
};

/// Closed-form least squares over the mask (3x3 normal equations solved by
/// Cramer's rule on centered data).
inline LinearBaseline fit_linear_baseline(const Volume& echo1, const Volume& echo2, const Volume& ct, const Mask& mask) {
  if (echo1.dims != echo2.dims || echo1.dims != ct.dims || echo1.dims != mask.dims)
    throw Error("baseline", "dims disagree");
  double n = 0, m1 = 0, m2 = 0, mc = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.bits[i]) {
      n += 1;
      m1 += echo1.data[i];
      m2 += echo2.data[i];
      mc += ct.data[i];
    }
  if (n < 3) throw Error("baseline", "need at least 3 mask voxels");
  m1 /= n;
  m2 /= n;
  mc /= n;
  double s11 = 0, s12 = 0, s22 = 0, s1c = 0, s2c = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.bits[i]) {
      const double u = echo1.data[i] - m1, v = echo2.data[i] - m2, w = ct.data[i] - mc;
      s11 += u * u;
      s12 += u * v;
      s22 += v * v;
      s1c += u * w;
      s2c += v * w;
    }
  const double det = s11 * s22 - s12 * s12;
  if (!(std::fabs(det) > 0.0)) throw Error("baseline", "singular design: echoes are collinear inside the mask");
  LinearBaseline fit;
  fit.a = (s1c * s22 - s2c * s12) / det;
  fit.b = (s2c * s11 - s1c * s12) / det;
  fit.c = mc - fit.a * m1 - fit.b * m2;
  return fit;
}

}  // namespace svox
