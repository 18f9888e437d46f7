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

/// @file smoothing.hpp
/// @brief Separable 3D Gaussian smoothing with edge renormalization.

#ifndef WARPAUG_SMOOTHING_HPP
#define WARPAUG_SMOOTHING_HPP

#include <cmath>
#include <vector>

#include "warpaug/volume.hpp"

namespace warpaug {

/// FWHM -> sigma conversion constant, 2*sqrt(2*ln 2).
inline constexpr double kFwhmToSigma = 2.3548200450309493;

inline double fwhmToSigmaVoxels(double fwhm_mm, double voxel_mm) {
  return (fwhm_mm / voxel_mm) / kFwhmToSigma;
}

namespace detail {

/// Gaussian taps at integer offsets, truncated at 4 sigma, normalized to 1.
inline std::vector<double> gaussianKernel(double sigma_vox) {
  int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma_vox)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double w = std::exp(-0.5 * (i * i) / (sigma_vox * sigma_vox));
    k[i + radius] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

/// One axis pass. At the grid edge the kernel is renormalized over the
/// in-bounds taps so constants pass through unchanged.
inline void axisPass(std::vector<float>& data, const VolumeHeader& h, int axis,
                     const std::vector<double>& kernel) {
  int radius = (static_cast<int>(kernel.size()) - 1) / 2;
  int n = h.dim[axis];
  size_t stride = 1;
  for (int a = 0; a < axis; ++a) stride *= h.dim[a];
  size_t outer = h.nvox() / n;
  std::vector<double> line(n);
  for (size_t o = 0; o < outer; ++o) {
    // base index of this line
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
    for (int x = 0; x < n; ++x) {
      double acc = 0.0, wsum = 0.0;
      int lo = std::max(-radius, -x), hi = std::min(radius, n - 1 - x);
      for (int t = lo; t <= hi; ++t) {
        double w = kernel[t + radius];
        acc += w * line[x + t];
        wsum += w;
      }
      data[base + x * stride] = static_cast<float>(acc / wsum);
    }
  }
}

}  // namespace detail

/// Smooths with per-axis sigma in voxels (already divided by voxel size).
inline Volume3D gaussianSmoothVoxels(const Volume3D& vol,
                                     const Eigen::Vector3d& sigma_vox) {
  Volume3D out = vol;
  for (int axis = 0; axis < 3; ++axis) {
    if (sigma_vox[axis] <= 0) continue;
    auto k = detail::gaussianKernel(sigma_vox[axis]);
    detail::axisPass(out.data, out.header, axis, k);
  }
  return out;
}

/// Separable 3-pass Gaussian with full-width-half-maximum given in mm.
inline Volume3D gaussianSmooth(const Volume3D& vol, double fwhm_mm) {
  if (!(fwhm_mm > 0))
    throw Error(ErrorKind::parameter, "fwhm must be positive");
  Eigen::Vector3d sigma;
  for (int d = 0; d < 3; ++d)
    sigma[d] = fwhmToSigmaVoxels(fwhm_mm, vol.header.voxel_size[d]);
  return gaussianSmoothVoxels(vol, sigma);
}

/// Smooths a displacement-like vector component field in mm units.
inline void gaussianSmoothInPlaceMm(Volume3D& vol, double sigma_mm) {
  if (sigma_mm <= 0) return;
  Eigen::Vector3d sigma;
  for (int d = 0; d < 3; ++d) sigma[d] = sigma_mm / vol.header.voxel_size[d];
  vol = gaussianSmoothVoxels(vol, sigma);
}

}  // namespace warpaug

#endif  // WARPAUG_SMOOTHING_HPP
