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

/// @file volume.hpp
/// @brief Core volumetric types: headers, 3D/4D scalar volumes, binary masks,
///        trilinear sampling and frame averaging.
///
/// Conventions used throughout the library:
///  - in-memory order is x-fastest: index = i + nx*(j + ny*k)
///  - continuous voxel coordinates place voxel centers at integers
///  - the header affine maps voxel indices to world millimetres
///  - sampling outside the grid returns 0 (zero-padding boundary policy)

#ifndef WARPAUG_VOLUME_HPP
#define WARPAUG_VOLUME_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "warpaug/common.hpp"

namespace warpaug {

struct VolumeHeader {
  std::array<int, 3> dim{0, 0, 0};  // spatial extents
  int nframes = 1;                  // >1 only for 4D headers
  int rank = 3;                     // 3 or 4
  Eigen::Vector3d voxel_size{1.0, 1.0, 1.0};   // mm per axis
  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();  // voxel -> world mm
  double time_step = 0.0;           // seconds per frame (4D only)

  size_t nvox() const {
    return static_cast<size_t>(dim[0]) * dim[1] * dim[2];
  }
  size_t index(int i, int j, int k) const {
    return static_cast<size_t>(i) +
           static_cast<size_t>(dim[0]) *
               (static_cast<size_t>(j) + static_cast<size_t>(dim[1]) * k);
  }
  bool inBounds(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dim[0] && j < dim[1] && k < dim[2];
  }

  Eigen::Vector3d voxelToWorld(const Eigen::Vector3d& v) const {
    return affine.topLeftCorner<3, 3>() * v + affine.topRightCorner<3, 1>();
  }
  Eigen::Vector3d worldToVoxel(const Eigen::Vector3d& w) const {
    return affine.topLeftCorner<3, 3>().inverse() *
           (w - affine.topRightCorner<3, 1>());
  }

  /// Spatial grids match: same dims, voxel sizes and affine (1e-6 tolerance).
  bool sameGrid(const VolumeHeader& o) const {
    if (dim != o.dim) return false;
    return (affine - o.affine).cwiseAbs().maxCoeff() < 1e-6 &&
           (voxel_size - o.voxel_size).cwiseAbs().maxCoeff() < 1e-6;
  }

  VolumeHeader spatial() const {
    VolumeHeader h = *this;
    h.rank = 3;
    h.nframes = 1;
    h.time_step = 0.0;
    return h;
  }

  void validate() const {
    if (rank != 3 && rank != 4)
      throw Error(ErrorKind::dimension, "header rank must be 3 or 4");
    for (int d = 0; d < 3; ++d) {
      if (dim[d] <= 0)
        throw Error(ErrorKind::dimension, "non-positive spatial extent");
      if (!(voxel_size[d] > 0))
        throw Error(ErrorKind::invariant, "non-positive voxel size");
    }
    if (rank == 4 && nframes < 1)
      throw Error(ErrorKind::invariant, "4D header needs >= 1 frame");
    Eigen::Matrix3d lin = affine.topLeftCorner<3, 3>();
    if (std::abs(lin.determinant()) < 1e-8)
      throw Error(ErrorKind::invariant, "singular affine");
    for (int d = 0; d < 3; ++d) {
      double cn = lin.col(d).norm();
      if (std::abs(cn - voxel_size[d]) > 1e-6 * std::max(1.0, voxel_size[d]))
        throw Error(ErrorKind::invariant,
                    "voxel size disagrees with affine column norm");
    }
  }
};

/// Axis-aligned header helper: voxel axes along world axes, voxel 0 centered
/// at `origin` mm.
inline VolumeHeader makeHeader(std::array<int, 3> dim,
                               Eigen::Vector3d voxel_size,
                               Eigen::Vector3d origin = {0, 0, 0}) {
  VolumeHeader h;
  h.dim = dim;
  h.voxel_size = voxel_size;
  h.affine = Eigen::Matrix4d::Identity();
  for (int d = 0; d < 3; ++d) h.affine(d, d) = voxel_size[d];
  h.affine.topRightCorner<3, 1>() = origin;
  return h;
}

struct Volume3D {
  VolumeHeader header;
  std::vector<float> data;

  Volume3D() = default;
  explicit Volume3D(const VolumeHeader& h, float fill = 0.0f)
      : header(h.spatial()), data(h.nvox(), fill) {}

  float& at(int i, int j, int k) { return data[header.index(i, j, k)]; }
  float at(int i, int j, int k) const { return data[header.index(i, j, k)]; }

  void validate() const {
    header.validate();
    if (data.size() != header.nvox())
      throw Error(ErrorKind::invariant, "data length != dim product");
    for (float v : data)
      if (!std::isfinite(v))
        throw Error(ErrorKind::invariant, "non-finite voxel value");
  }
};

struct Volume4D {
  VolumeHeader header;              // rank 4; nframes = frames.size()
  std::vector<Volume3D> frames;

  Volume4D() = default;
  Volume4D(const VolumeHeader& spatial, int nframes, double tr) {
    header = spatial.spatial();
    header.rank = 4;
    header.nframes = nframes;
    header.time_step = tr;
    frames.assign(nframes, Volume3D(spatial));
  }

  void validate() const {
    header.validate();
    if (frames.empty())
      throw Error(ErrorKind::invariant, "4D volume needs >= 1 frame");
    if (static_cast<int>(frames.size()) != header.nframes)
      throw Error(ErrorKind::invariant, "frame count disagrees with header");
    for (const auto& f : frames) {
      if (!f.header.sameGrid(header))
        throw Error(ErrorKind::invariant, "frames on differing spatial grids");
      f.validate();
    }
  }
};

struct BinaryMask {
  VolumeHeader header;
  std::vector<uint8_t> data;

  BinaryMask() = default;
  explicit BinaryMask(const VolumeHeader& h, uint8_t fill = 0)
      : header(h.spatial()), data(h.nvox(), fill) {}

  uint8_t& at(int i, int j, int k) { return data[header.index(i, j, k)]; }
  uint8_t at(int i, int j, int k) const { return data[header.index(i, j, k)]; }

  size_t count() const {
    size_t n = 0;
    for (uint8_t v : data) n += (v != 0);
    return n;
  }

  void validate() const {
    header.validate();
    if (data.size() != header.nvox())
      throw Error(ErrorKind::invariant, "mask length != dim product");
    for (uint8_t v : data)
      if (v > 1) throw Error(ErrorKind::invariant, "mask value not in {0,1}");
  }
};

/// Trilinear interpolation at a continuous voxel coordinate; zero outside.
inline double trilinearSample(const Volume3D& vol, const Eigen::Vector3d& p) {
  const auto& d = vol.header.dim;
  // entirely outside the closed voxel-center hull plus one-voxel apron
  if (p[0] <= -1.0 || p[1] <= -1.0 || p[2] <= -1.0 || p[0] >= d[0] ||
      p[1] >= d[1] || p[2] >= d[2])
    return 0.0;
  int i0 = static_cast<int>(std::floor(p[0]));
  int j0 = static_cast<int>(std::floor(p[1]));
  int k0 = static_cast<int>(std::floor(p[2]));
  double fx = p[0] - i0, fy = p[1] - j0, fz = p[2] - k0;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        int i = i0 + dx, j = j0 + dy, k = k0 + dz;
        if (!vol.header.inBounds(i, j, k)) continue;  // zero padding
        double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) *
                   (dz ? fz : 1.0 - fz);
        acc += w * vol.data[vol.header.index(i, j, k)];
      }
  return acc;
}

/// Voxelwise arithmetic mean across frames; spatial header preserved.
inline Volume3D meanFrame(const Volume4D& vol) {
  if (vol.frames.empty())
    throw Error(ErrorKind::parameter, "meanFrame of empty 4D volume");
  Volume3D out(vol.frames[0].header);
  const size_t n = out.data.size();
  std::vector<double> acc(n, 0.0);
  for (const auto& f : vol.frames)
    for (size_t v = 0; v < n; ++v) acc[v] += f.data[v];
  const double inv = 1.0 / static_cast<double>(vol.frames.size());
  for (size_t v = 0; v < n; ++v) out.data[v] = static_cast<float>(acc[v] * inv);
  return out;
}

// --- tiny voxelwise helpers used across modules ----------------------------

inline double meanValue(const Volume3D& v) {
  double s = 0;
  for (float x : v.data) s += x;
  return v.data.empty() ? 0.0 : s / static_cast<double>(v.data.size());
}

inline double maxAbsDiff(const Volume3D& a, const Volume3D& b) {
  double m = 0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
  return m;
}

/// Pearson correlation of two volumes over an optional mask.
inline double correlation(const Volume3D& a, const Volume3D& b,
                          const BinaryMask* mask = nullptr) {
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  size_t n = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    if (mask && !mask->data[i]) continue;
    double x = a.data[i], y = b.data[i];
    sa += x;
    sb += y;
    saa += x * x;
    sbb += y * y;
    sab += x * y;
    ++n;
  }
  if (n < 2) throw Error(ErrorKind::undefined_metric, "correlation needs n>=2");
  double va = saa - sa * sa / n, vb = sbb - sb * sb / n;
  if (va <= 0 || vb <= 0)
    throw Error(ErrorKind::undefined_metric, "zero variance in correlation");
  return (sab - sa * sb / n) / std::sqrt(va * vb);
}

}  // namespace warpaug

#endif  // WARPAUG_VOLUME_HPP
