#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svox/volume.hpp"

namespace svox {

namespace detail {

inline void check_eval_inputs(const Volume& ref, const Volume& test, const Mask& mask, std::size_t& n) {
  if (ref.dims != test.dims || ref.dims != mask.dims) throw Error("metrics", "reference, test and mask dims disagree");
  n = mask.count();
  if (n == 0) throw Error("metrics", "empty mask");
  if (n < 2) throw Error("metrics", "need at least 2 mask voxels");
}

}  // namespace detail

/// 10 log10(MAX^2 / MSE) over the mask, MAX being the reference peak inside
/// the mask. Identical volumes give +infinity.
inline double psnr(const Volume& reference, const Volume& test, const Mask& mask) {
  std::size_t n = 0;
  detail::check_eval_inputs(reference, test, mask, n);
  double peak = -std::numeric_limits<double>::infinity();
  double sse = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask.bits[i]) continue;
    const double a = reference.data[i], b = test.data[i];
    peak = std::max(peak, a);
    sse += (a - b) * (a - b);
  }
  if (!(peak > 0.0)) throw Error("metrics", "undefined reference peak (maximum inside mask is not positive)");
  const double mse = sse / static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

/// Sample Pearson correlation over the mask.
inline double pearson(const Volume& reference, const Volume& test, const Mask& mask) {
  std::size_t n = 0;
  detail::check_eval_inputs(reference, test, mask, n);
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.bits[i]) {
      ma += reference.data[i];
      mb += test.data[i];
    }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.bits[i]) {
      const double a = reference.data[i] - ma, b = test.data[i] - mb;
      sab += a * b;
      saa += a * a;
      sbb += b * b;
    }
  if (saa == 0.0 || sbb == 0.0) throw Error("metrics", "zero variance inside mask; correlation undefined");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Ranks of |d| (1-based), ties averaged, returned doubled so they are integers.
inline std::vector<std::uint64_t> doubled_abs_ranks(const std::vector<double>& d) {
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::fabs(d[a]) < std::fabs(d[b]); });
  std::vector<std::uint64_t> r2(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::fabs(d[order[j + 1]]) == std::fabs(d[order[i]])) ++j;
    // positions i..j share ranks i+1..j+1; doubled mean is (i+1)+(j+1)
    for (std::size_t k = i; k <= j; ++k) r2[order[k]] = (i + 1) + (j + 1);
    i = j + 1;
  }
  return r2;
}

inline constexpr std::size_t kWilcoxonExactMax = 25;

/// Exact two-sided Wilcoxon signed-rank p-value from the full 2^n sign-flip
/// distribution of W+ (zero differences dropped, tied ranks averaged):
/// P(|W+ - E W+| >= |w - E W+|).
inline double wilcoxon_signed_rank(const std::vector<double>& differences) {
  std::vector<double> d;
  for (double x : differences) {
    if (!std::isfinite(x)) throw Error("metrics", "non-finite difference");
    if (x != 0.0) d.push_back(x);
  }
  if (d.empty()) throw Error("metrics", "degenerate: all differences are zero");
  if (d.size() > kWilcoxonExactMax)
    throw Error("metrics", "exact Wilcoxon supports at most " + std::to_string(kWilcoxonExactMax) + " nonzero differences");
  const auto r2 = doubled_abs_ranks(d);
  std::uint64_t total = 0, observed = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total += r2[i];
    if (d[i] > 0) observed += r2[i];
  }
  // ways[s]: number of sign patterns with doubled W+ == s
  std::vector<std::uint64_t> ways(total + 1, 0);
  ways[0] = 1;
  for (std::uint64_t r : r2)
    for (std::uint64_t s = total; s >= r; --s) {
      ways[s] += ways[s - r];
      if (s == r) break;
    }
  // compare 2*|2W - total| to stay in integers
  auto dev = [&](std::uint64_t s) { return s * 2 > total ? s * 2 - total : total - s * 2; };
  const std::uint64_t obs_dev = dev(observed);
  std::uint64_t extreme = 0;
  for (std::uint64_t s = 0; s <= total; ++s)
    if (ways[s] && dev(s) >= obs_dev) extreme += ways[s];
  return static_cast<double>(extreme) / std::ldexp(1.0, static_cast<int>(d.size()));
}

struct EvalReport {
  double psnr_db = 0.0;
  double correlation = 0.0;
  std::size_t n_voxels = 0;
  std::string mask_source;
};

inline EvalReport evaluate(const Volume& reference, const Volume& test, const Mask& mask, std::string mask_source) {
  EvalReport r;
  r.psnr_db = psnr(reference, test, mask);
  r.correlation = pearson(reference, test, mask);
  r.n_voxels = mask.count();
  r.mask_source = std::move(mask_source);
  return r;
}

/// Fixed-precision rendering; +inf prints "inf".
inline std::string format_metric(double v, int precision) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

inline std::string to_json_string(const EvalReport& r) {
  nlohmann::ordered_json j;
  if (std::isfinite(r.psnr_db))
    j["psnr_db"] = std::stod(format_metric(r.psnr_db, 6));
  else
    j["psnr_db"] = format_metric(r.psnr_db, 6);
  j["correlation"] = std::stod(format_metric(r.correlation, 8));
  j["n_voxels"] = r.n_voxels;
  j["mask_source"] = r.mask_source;
  return j.dump(2) + "\n";
}

/// Aligned metric x subject table: one PSNR row block and one correlation
/// row block, one row per method.
inline std::string format_comparison_table(const std::vector<std::string>& methods,
                                           const std::vector<std::string>& subjects,
                                           const std::vector<std::vector<EvalReport>>& reports) {
  std::size_t method_w = 6;
  for (const auto& m : methods) method_w = std::max(method_w, m.size());
  const int col = 10;
  std::ostringstream os;
  os << std::left << std::setw(13) << "Metric" << std::setw(static_cast<int>(method_w) + 2) << "Method";
  for (const auto& s : subjects) os << std::right << std::setw(col) << s;
  os << "\n";
  for (int metric = 0; metric < 2; ++metric) {
    for (std::size_t m = 0; m < methods.size(); ++m) {
      os << std::left << std::setw(13) << (m == 0 ? (metric == 0 ? "PSNR" : "Correlation") : "")
         << std::setw(static_cast<int>(method_w) + 2) << methods[m];
      for (std::size_t s = 0; s < subjects.size(); ++s) {
        const auto& r = reports.at(m).at(s);
        os << std::right << std::setw(col)
           << (metric == 0 ? format_metric(r.psnr_db, 2) : format_metric(r.correlation, 4));
      }
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace svox
