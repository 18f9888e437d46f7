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

/// @file transform.hpp
/// @brief Spatial transforms: affine, dense displacement field, and chains of
///        both, plus single-pass resampling through a chain.
///
/// Every stage is a pull-back map in world millimetres: apply(p) takes a point
/// in the stage's fixed space to the corresponding point in its moving space.
/// A chain maps points through its stages in order (chain[0] first), so the
/// whole chain is itself a pull-back from the outermost fixed space to the
/// innermost moving space, and resampling needs exactly one interpolation of
/// the moving image per output voxel.

#ifndef WARPAUG_TRANSFORM_HPP
#define WARPAUG_TRANSFORM_HPP

#include <variant>
#include <vector>

#include "warpaug/volume.hpp"

namespace warpaug {

struct AffineTransform {
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return matrix * p + translation;
  }

  AffineTransform inverse() const {
    AffineTransform inv;
    inv.matrix = matrix.inverse();
    inv.translation = -inv.matrix * translation;
    return inv;
  }

  static AffineTransform identity() { return {}; }

  static AffineTransform translationOnly(const Eigen::Vector3d& t) {
    AffineTransform a;
    a.translation = t;
    return a;
  }

  void validate() const {
    if (std::abs(matrix.determinant()) < 1e-8)
      throw Error(ErrorKind::invariant, "singular affine transform");
    if (!matrix.allFinite() || !translation.allFinite())
      throw Error(ErrorKind::invariant, "non-finite affine transform");
  }
};

/// Dense per-voxel displacement in mm on a fixed grid: apply(p) = p + u(p).
/// Displacements interpolate trilinearly and vanish outside the grid.
struct DisplacementField {
  VolumeHeader header;                    // grid the vectors live on
  std::array<std::vector<float>, 3> u;    // x/y/z components, mm

  DisplacementField() = default;
  explicit DisplacementField(const VolumeHeader& h) : header(h.spatial()) {
    for (auto& c : u) c.assign(header.nvox(), 0.0f);
  }

  Eigen::Vector3d displacementAt(const Eigen::Vector3d& p_world) const {
    Eigen::Vector3d v = header.worldToVoxel(p_world);
    const auto& d = header.dim;
    if (v[0] <= -1.0 || v[1] <= -1.0 || v[2] <= -1.0 || v[0] >= d[0] ||
        v[1] >= d[1] || v[2] >= d[2])
      return Eigen::Vector3d::Zero();
    int i0 = static_cast<int>(std::floor(v[0]));
    int j0 = static_cast<int>(std::floor(v[1]));
    int k0 = static_cast<int>(std::floor(v[2]));
    double fx = v[0] - i0, fy = v[1] - j0, fz = v[2] - k0;
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          int i = i0 + dx, j = j0 + dy, k = k0 + dz;
          if (!header.inBounds(i, j, k)) continue;
          double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) *
                     (dz ? fz : 1.0 - fz);
          size_t idx = header.index(i, j, k);
          acc[0] += w * u[0][idx];
          acc[1] += w * u[1][idx];
          acc[2] += w * u[2][idx];
        }
    return acc;
  }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return p + displacementAt(p);
  }

  /// Fraction of listed voxels where det(I + du/dx) > 0. `mask` may be null
  /// (all voxels counted). Central differences, one-sided at edges.
  double positiveJacobianFraction(const BinaryMask* mask = nullptr) const {
    const auto& d = header.dim;
    Eigen::Matrix3d vox_to_world = header.affine.topLeftCorner<3, 3>();
    Eigen::Matrix3d world_from_vox = vox_to_world.inverse();
    size_t total = 0, positive = 0;
    for (int k = 0; k < d[2]; ++k)
      for (int j = 0; j < d[1]; ++j)
        for (int i = 0; i < d[0]; ++i) {
          size_t idx = header.index(i, j, k);
          if (mask && !mask->data[idx]) continue;
          Eigen::Matrix3d dudv;  // du/dvoxel
          int c[3] = {i, j, k};
          for (int ax = 0; ax < 3; ++ax) {
            int lo = c[ax] > 0 ? c[ax] - 1 : c[ax];
            int hi = c[ax] < d[ax] - 1 ? c[ax] + 1 : c[ax];
            double inv_span = hi > lo ? 1.0 / (hi - lo) : 0.0;
            int pc[3] = {i, j, k}, mc[3] = {i, j, k};
            pc[ax] = hi;
            mc[ax] = lo;
            size_t pi = header.index(pc[0], pc[1], pc[2]);
            size_t mi = header.index(mc[0], mc[1], mc[2]);
            for (int comp = 0; comp < 3; ++comp)
              dudv(comp, ax) = (u[comp][pi] - u[comp][mi]) * inv_span;
          }
          Eigen::Matrix3d jac =
              Eigen::Matrix3d::Identity() + dudv * world_from_vox;
          ++total;
          if (jac.determinant() > 0) ++positive;
        }
    if (total == 0) return 1.0;
    return static_cast<double>(positive) / static_cast<double>(total);
  }

  void validate(const BinaryMask* mask = nullptr) const {
    header.validate();
    for (const auto& c : u) {
      if (c.size() != header.nvox())
        throw Error(ErrorKind::invariant, "field component length mismatch");
      for (float v : c)
        if (!std::isfinite(v))
          throw Error(ErrorKind::invariant, "non-finite displacement");
    }
    if (positiveJacobianFraction(mask) < 0.995)
      throw Error(ErrorKind::invariant,
                  "displacement field fails the positive-Jacobian certificate");
  }

  /// Approximate inverse by fixed-point iteration v(y) = -u(y + v(y)).
  DisplacementField inverted(int iterations = 30) const {
    DisplacementField inv(header);
    const auto& d = header.dim;
    for (int k = 0; k < d[2]; ++k)
      for (int j = 0; j < d[1]; ++j)
        for (int i = 0; i < d[0]; ++i) {
          size_t idx = header.index(i, j, k);
          Eigen::Vector3d y =
              header.voxelToWorld(Eigen::Vector3d(i, j, k));
          Eigen::Vector3d v = Eigen::Vector3d::Zero();
          for (int it = 0; it < iterations; ++it)
            v = -displacementAt(y + v);
          inv.u[0][idx] = static_cast<float>(v[0]);
          inv.u[1][idx] = static_cast<float>(v[1]);
          inv.u[2][idx] = static_cast<float>(v[2]);
        }
    return inv;
  }
};

using TransformStage = std::variant<AffineTransform, DisplacementField>;

inline Eigen::Vector3d applyStage(const TransformStage& s,
                                  const Eigen::Vector3d& p) {
  if (std::holds_alternative<AffineTransform>(s))
    return std::get<AffineTransform>(s).apply(p);
  return std::get<DisplacementField>(s).apply(p);
}

/// Ordered transform chain; mapPoint applies chain[0] first.
struct CompositeTransform {
  std::vector<TransformStage> chain;

  CompositeTransform() = default;
  explicit CompositeTransform(TransformStage stage) {
    chain.push_back(std::move(stage));
  }

  static CompositeTransform identity() {
    return CompositeTransform(AffineTransform::identity());
  }

  Eigen::Vector3d mapPoint(Eigen::Vector3d p) const {
    for (const auto& s : chain) p = applyStage(s, p);
    return p;
  }

  void validate() const {
    if (chain.empty())
      throw Error(ErrorKind::invariant, "empty transform chain");
  }

  /// Approximate inverse: stage inverses in reverse order (fields inverted
  /// by fixed-point iteration). Intended for analysis, not resampling paths.
  CompositeTransform inverse() const {
    CompositeTransform out;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      if (std::holds_alternative<AffineTransform>(*it))
        out.chain.emplace_back(std::get<AffineTransform>(*it).inverse());
      else
        out.chain.emplace_back(std::get<DisplacementField>(*it).inverted());
    }
    return out;
  }
};

/// Concatenates two chains. `outer` is the warp applied later to images,
/// which is the map applied first to points under the pull-back convention.
inline CompositeTransform composeTransforms(const CompositeTransform& outer,
                                            const CompositeTransform& inner) {
  CompositeTransform out;
  out.chain = outer.chain;
  out.chain.insert(out.chain.end(), inner.chain.begin(), inner.chain.end());
  out.validate();
  return out;
}

/// Maps every reference voxel through the chain and samples `moving` once.
inline Volume3D resample(const Volume3D& moving,
                         const CompositeTransform& transform,
                         const VolumeHeader& reference) {
  transform.validate();
  VolumeHeader ref = reference.spatial();
  Volume3D out(ref);
  Eigen::Matrix3d mov_inv =
      moving.header.affine.topLeftCorner<3, 3>().inverse();
  Eigen::Vector3d mov_origin = moving.header.affine.topRightCorner<3, 1>();
  for (int k = 0; k < ref.dim[2]; ++k)
    for (int j = 0; j < ref.dim[1]; ++j)
      for (int i = 0; i < ref.dim[0]; ++i) {
        Eigen::Vector3d world =
            ref.voxelToWorld(Eigen::Vector3d(i, j, k));
        Eigen::Vector3d mapped = transform.mapPoint(world);
        Eigen::Vector3d vox = mov_inv * (mapped - mov_origin);
        out.data[ref.index(i, j, k)] =
            static_cast<float>(trilinearSample(moving, vox));
      }
  return out;
}

/// 4D resampling applies the same spatial transform to every frame.
inline Volume4D resample(const Volume4D& moving,
                         const CompositeTransform& transform,
                         const VolumeHeader& reference) {
  Volume4D out(reference.spatial(), static_cast<int>(moving.frames.size()),
               moving.header.time_step);
  for (size_t f = 0; f < moving.frames.size(); ++f)
    out.frames[f] = resample(moving.frames[f], transform, reference);
  return out;
}

/// Reference grid covering the same world box as `src` at a new voxel size.
/// Axis directions are preserved; the box corner stays put, so voxel centers
/// shift by half the voxel-size difference.
inline VolumeHeader resampledHeader(const VolumeHeader& src,
                                    const Eigen::Vector3d& new_voxel_size) {
  VolumeHeader out = src.spatial();
  Eigen::Matrix3d lin = src.affine.topLeftCorner<3, 3>();
  for (int d = 0; d < 3; ++d) {
    if (!(new_voxel_size[d] > 0))
      throw Error(ErrorKind::parameter, "non-positive voxel size");
    Eigen::Vector3d dir = lin.col(d) / src.voxel_size[d];
    out.dim[d] = std::max(
        1, static_cast<int>(std::ceil(src.dim[d] * src.voxel_size[d] /
                                      new_voxel_size[d] - 1e-9)));
    out.affine.block<3, 1>(0, d) = dir * new_voxel_size[d];
    out.affine.block<3, 1>(0, 3) +=
        dir * (new_voxel_size[d] - src.voxel_size[d]) * 0.5;
    out.voxel_size[d] = new_voxel_size[d];
  }
  return out;
}

}  // namespace warpaug

#endif  // WARPAUG_TRANSFORM_HPP
