// Copyright (c) 2026 the warpaug authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/// @file metric.hpp
/// @brief Image similarity metrics and their voxelwise intensity gradients:
///        local normalized cross-correlation (box window, radius 2) and
///        mutual information (32x32 joint histogram, partial-volume binning).

#ifndef WARPAUG_METRIC_HPP
#define WARPAUG_METRIC_HPP

#include <vector>

#include "warpaug/volume.hpp"

namespace warpaug {

enum class MetricKind { lncc, mutual_information };

inline constexpr int kLnccWindowRadius = 2;
inline constexpr int kMiBins = 32;

namespace detail {

/// In-place truncated box sum along one axis (radius r, edges shrink).
inline void boxPass(std::vector<double>& data, const VolumeHeader& h, int axis,
                    int r) {
  int n = h.dim[axis];
  size_t stride = 1;
  for (int a = 0; a < axis; ++a) stride *= h.dim[a];
  size_t outer = h.nvox() / n;
  std::vector<double> line(n);
  for (size_t o = 0; o < outer; ++o) {
    size_t base;
    if (axis == 0) {
      base = o * static_cast<size_t>(n);
    } else if (axis == 1) {
      size_t i = o % h.dim[0], k = o / h.dim[0];
      base = i + static_cast<size_t>(h.dim[0]) * h.dim[1] * k;
    } else {
      base = o;
    }
    for (int x = 0; x < n; ++x) line[x] = data[base + x * stride];
    double run = 0;
    for (int x = 0; x < std::min(r, n - 1) + 1; ++x) run += line[x];
    for (int x = 0; x < n; ++x) {
      data[base + x * stride] = run;
      int out = x - r, in = x + r + 1;
      if (out >= 0) run -= line[out];
      if (in < n) run += line[in];
    }
  }
}

inline void boxSum3(std::vector<double>& data, const VolumeHeader& h, int r) {
  for (int axis = 0; axis < 3; ++axis) boxPass(data, h, axis, r);
}

struct MetricEval {
  double value = 0.0;
  std::vector<double> grad;  // d(value)/d(moving intensity), per voxel
};

/// LNCC: mean of windowed NCC over valid centers. A center is valid when it
/// is in the mask and the FIXED image has non-negligible window variance, so
/// the normalizing count never depends on the moving image and zero-variance
/// windows contribute 0. The moving variance is floored at the same level,
/// which bounds the gradient where the warped image is locally flat. The
/// gradient sums each voxel's contribution over every window containing it,
/// expressed with four extra box filters.
inline MetricEval lnccEval(const Volume3D& fixed, const Volume3D& moving,
                           const BinaryMask* mask, bool want_grad) {
  const VolumeHeader& h = fixed.header;
  const size_t n = h.nvox();
  const int r = kLnccWindowRadius;
  std::vector<double> sf(n), sm(n), sff(n), smm(n), sfm(n), cnt(n, 1.0);
  float frange_lo = 0, frange_hi = 0;
  bool first = true;
  size_t n_mask = 0;
  for (size_t i = 0; i < n; ++i) {
    double f = fixed.data[i], m = moving.data[i];
    sf[i] = f;
    sm[i] = m;
    sff[i] = f * f;
    smm[i] = m * m;
    sfm[i] = f * m;
    if (mask && !mask->data[i]) continue;
    ++n_mask;
    if (first) {
      frange_lo = frange_hi = fixed.data[i];
      first = false;
    } else {
      frange_lo = std::min(frange_lo, fixed.data[i]);
      frange_hi = std::max(frange_hi, fixed.data[i]);
    }
  }
  if (n_mask == 0)
    throw Error(ErrorKind::parameter, "empty mask in metric evaluation");
  boxSum3(sf, h, r);
  boxSum3(sm, h, r);
  boxSum3(sff, h, r);
  boxSum3(smm, h, r);
  boxSum3(sfm, h, r);
  boxSum3(cnt, h, r);

  // variance floor: windows whose standard deviation is below 0.1% of the
  // fixed intensity range are flat
  const double range = static_cast<double>(frange_hi) - frange_lo;
  const double sd_floor = std::max(1e-3 * range, 1e-12);

  size_t n_valid = 0;
  double total = 0.0;
  std::vector<double> a, b, a_mf, b_mm;  // per-center gradient coefficients
  if (want_grad) {
    a.assign(n, 0.0);
    b.assign(n, 0.0);
    a_mf.assign(n, 0.0);
    b_mm.assign(n, 0.0);
  }
  for (size_t i = 0; i < n; ++i) {
    if (mask && !mask->data[i]) continue;
    double N = cnt[i];
    double var_floor = sd_floor * sd_floor * N;
    double cross = sfm[i] - sf[i] * sm[i] / N;
    double varf = sff[i] - sf[i] * sf[i] / N;
    double varm = smm[i] - sm[i] * sm[i] / N;
    if (varf <= var_floor) continue;  // flat fixed window: never a center
    ++n_valid;
    bool floored = varm < var_floor;
    double varm_eff = floored ? var_floor : varm;
    double denom = std::sqrt(varf * varm_eff);
    double s = cross / denom;
    total += s;
    if (want_grad) {
      a[i] = 1.0 / denom;
      b[i] = floored ? 0.0 : s / varm;
      a_mf[i] = a[i] * (sf[i] / N);   // a_c * mean(F) at center c
      b_mm[i] = b[i] * (sm[i] / N);   // b_c * mean(M) at center c
    }
  }
  MetricEval out;
  if (n_valid == 0) {
    // fixed image flat everywhere under the mask: no correlation structure
    out.value = 0.0;
    if (want_grad) out.grad.assign(n, 0.0);
    return out;
  }
  double inv_valid = 1.0 / static_cast<double>(n_valid);
  out.value = total * inv_valid;
  if (want_grad) {
    boxSum3(a, h, r);
    boxSum3(b, h, r);
    boxSum3(a_mf, h, r);
    boxSum3(b_mm, h, r);
    out.grad.resize(n);
    for (size_t i = 0; i < n; ++i)
      out.grad[i] = inv_valid * (fixed.data[i] * a[i] - a_mf[i] -
                                 moving.data[i] * b[i] + b_mm[i]);
  }
  return out;
}

struct PvBin {
  int b0;
  double w0, w1;   // hat weights of bins b0 and b0+1
  double dw;       // d(w1)/d(intensity) = -d(w0)/d(intensity)
};

inline PvBin pvBin(double v, double lo, double inv_width) {
  double t = (v - lo) * inv_width;
  if (t <= 0.0) return {0, 1.0, 0.0, 0.0};
  if (t >= kMiBins - 1) return {kMiBins - 2, 0.0, 1.0, 0.0};
  int b0 = static_cast<int>(t);
  double f = t - b0;
  return {b0, 1.0 - f, f, inv_width};
}

/// Mutual information in nats over the mask with linear partial-volume
/// binning; gradient follows the standard Mattes derivation.
inline MetricEval miEval(const Volume3D& fixed, const Volume3D& moving,
                         const BinaryMask* mask, bool want_grad) {
  const size_t n = fixed.header.nvox();
  double flo = 0, fhi = 0, mlo = 0, mhi = 0;
  bool first = true;
  size_t n_mask = 0;
  for (size_t i = 0; i < n; ++i) {
    if (mask && !mask->data[i]) continue;
    ++n_mask;
    double f = fixed.data[i], m = moving.data[i];
    if (first) {
      flo = fhi = f;
      mlo = mhi = m;
      first = false;
    } else {
      flo = std::min(flo, f);
      fhi = std::max(fhi, f);
      mlo = std::min(mlo, m);
      mhi = std::max(mhi, m);
    }
  }
  if (n_mask == 0)
    throw Error(ErrorKind::parameter, "empty mask in metric evaluation");
  if (!(fhi > flo) || !(mhi > mlo)) {
    // a constant image carries no information
    MetricEval out;
    out.value = 0.0;
    if (want_grad) out.grad.assign(n, 0.0);
    return out;
  }
  double f_inv = (kMiBins - 1) / (fhi - flo);
  double m_inv = (kMiBins - 1) / (mhi - mlo);

  std::vector<double> joint(kMiBins * kMiBins, 0.0);
  for (size_t i = 0; i < n; ++i) {
    if (mask && !mask->data[i]) continue;
    PvBin pf = pvBin(fixed.data[i], flo, f_inv);
    PvBin pm = pvBin(moving.data[i], mlo, m_inv);
    joint[pf.b0 * kMiBins + pm.b0] += pf.w0 * pm.w0;
    joint[pf.b0 * kMiBins + pm.b0 + 1] += pf.w0 * pm.w1;
    joint[(pf.b0 + 1) * kMiBins + pm.b0] += pf.w1 * pm.w0;
    joint[(pf.b0 + 1) * kMiBins + pm.b0 + 1] += pf.w1 * pm.w1;
  }
  double inv_n = 1.0 / static_cast<double>(n_mask);
  for (auto& p : joint) p *= inv_n;
  std::array<double, kMiBins> pf_marg{}, pm_marg{};
  for (int i = 0; i < kMiBins; ++i)
    for (int j = 0; j < kMiBins; ++j) {
      pf_marg[i] += joint[i * kMiBins + j];
      pm_marg[j] += joint[i * kMiBins + j];
    }
  constexpr double kPEps = 1e-12;
  double mi = 0.0;
  for (int i = 0; i < kMiBins; ++i)
    for (int j = 0; j < kMiBins; ++j) {
      double p = joint[i * kMiBins + j];
      if (p > kPEps) mi += p * std::log(p / (pf_marg[i] * pm_marg[j]));
    }
  MetricEval out;
  out.value = mi;
  if (want_grad) {
    // ln p_ij and ln q_j tables, clamped at the epsilon floor
    std::vector<double> logj(kMiBins * kMiBins);
    std::array<double, kMiBins> logq;
    for (int j = 0; j < kMiBins; ++j)
      logq[j] = std::log(std::max(pm_marg[j], kPEps));
    for (int i = 0; i < kMiBins * kMiBins; ++i)
      logj[i] = std::log(std::max(joint[i], kPEps));
    out.grad.assign(n, 0.0);
    for (size_t v = 0; v < n; ++v) {
      if (mask && !mask->data[v]) continue;
      PvBin pf = pvBin(fixed.data[v], flo, f_inv);
      PvBin pm = pvBin(moving.data[v], mlo, m_inv);
      if (pm.dw == 0.0) continue;
      double g = 0.0;
      for (int dj = 0; dj < 2; ++dj) {
        int j = pm.b0 + dj;
        double sign = dj ? pm.dw : -pm.dw;
        double inner = pf.w0 * logj[pf.b0 * kMiBins + j] +
                       pf.w1 * logj[(pf.b0 + 1) * kMiBins + j];
        g += sign * (inner - logq[j]);
      }
      out.grad[v] = g * inv_n;
    }
  }
  return out;
}

inline MetricEval metricEval(const Volume3D& fixed, const Volume3D& moving,
                             const BinaryMask* mask, MetricKind kind,
                             bool want_grad) {
  if (!fixed.header.sameGrid(moving.header))
    throw Error(ErrorKind::shape, "metric inputs on different grids");
  if (mask && !mask->header.sameGrid(fixed.header))
    throw Error(ErrorKind::shape, "metric mask on different grid");
  return kind == MetricKind::lncc ? lnccEval(fixed, moving, mask, want_grad)
                                  : miEval(fixed, moving, mask, want_grad);
}

}  // namespace detail

/// Similarity between two images on a common grid; higher is better.
/// LNCC lies in [-1,1]; MI is in nats, >= 0.
inline double metricValue(const Volume3D& fixed,
                          const Volume3D& moving_resampled,
                          const BinaryMask& mask, MetricKind kind) {
  return detail::metricEval(fixed, moving_resampled, &mask, kind, false).value;
}

}  // namespace warpaug

#endif  // WARPAUG_METRIC_HPP
