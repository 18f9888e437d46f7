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

/// @file registration.hpp
/// @brief Multi-resolution affine and diffeomorphic (greedy demons with
///        fluid + diffusion regularization) registration.
///
/// The affine optimizer climbs the metric with analytic gradients w.r.t. the
/// transform parameters: chain rule through trilinear sampling of the moving
/// image's central-difference gradient. Steps are trust-region style: the
/// parameter direction is scaled so the largest induced displacement equals
/// the current step length, and the step halves until the metric improves.
///
/// The demons loop keeps the accumulated field diffeomorphic by halving the
/// update whenever the positive-Jacobian fraction would drop below 99.5%.

#ifndef WARPAUG_REGISTRATION_HPP
#define WARPAUG_REGISTRATION_HPP

#include <optional>
#include <vector>

#include "warpaug/metric.hpp"
#include "warpaug/smoothing.hpp"
#include "warpaug/transform.hpp"

namespace warpaug {

enum class AffineDof { rigid6, full12 };

struct RegistrationParams {
  MetricKind metric = MetricKind::lncc;
  int pyramid_levels = 3;          // downsample x2 per level
  int max_iterations_per_level = 50;
  double convergence_tol = 1e-4;   // relative metric change
  double fluid_sigma_mm = 3.0;     // smoothing of the demons update field
  double diffusion_sigma_mm = 1.5; // smoothing of the accumulated field
  double step_length = 2.0;        // mm, initial trust step
  int finest_scale = 1;            // power-of-two subsampling of finest level
  AffineDof affine_dof = AffineDof::full12;
  uint64_t seed = 0;

  void validate() const {
    if (pyramid_levels < 1)
      throw Error(ErrorKind::parameter, "pyramid_levels must be >= 1");
    if (fluid_sigma_mm < 0 || diffusion_sigma_mm < 0)
      throw Error(ErrorKind::parameter, "sigmas must be >= 0");
    if (!(step_length > 0))
      throw Error(ErrorKind::parameter, "step_length must be positive");
    if (max_iterations_per_level < 1)
      throw Error(ErrorKind::parameter, "max_iterations must be >= 1");
    if (!(convergence_tol > 0))
      throw Error(ErrorKind::parameter, "convergence_tol must be positive");
  }
};

struct AffineResult {
  AffineTransform transform;
  bool converged = false;
  double metric = 0.0;
  int iterations = 0;
};

/// Objective values at accepted steps, per pyramid level (coarse to fine).
/// Non-decreasing within each level by construction of the line search.
struct ObjectiveTrace {
  std::vector<std::vector<double>> levels;
};

namespace detail {

/// Downsamples by 2 per axis: presmooth then decimate; voxel 0 stays put.
inline Volume3D downsample2(const Volume3D& in) {
  Volume3D sm = gaussianSmooth(in, 2.0 * in.header.voxel_size.minCoeff());
  VolumeHeader h = in.header;
  for (int d = 0; d < 3; ++d) {
    h.dim[d] = (in.header.dim[d] + 1) / 2;
    h.affine.block<3, 1>(0, d) *= 2.0;
    h.voxel_size[d] *= 2.0;
  }
  Volume3D out(h);
  for (int k = 0; k < h.dim[2]; ++k)
    for (int j = 0; j < h.dim[1]; ++j)
      for (int i = 0; i < h.dim[0]; ++i)
        out.at(i, j, k) = sm.at(std::min(2 * i, in.header.dim[0] - 1),
                                std::min(2 * j, in.header.dim[1] - 1),
                                std::min(2 * k, in.header.dim[2] - 1));
  return out;
}

inline BinaryMask downsampleMask2(const BinaryMask& in,
                                  const VolumeHeader& target) {
  BinaryMask out(target);
  for (int k = 0; k < target.dim[2]; ++k)
    for (int j = 0; j < target.dim[1]; ++j)
      for (int i = 0; i < target.dim[0]; ++i) {
        uint8_t v = 0;
        for (int dz = 0; dz < 2 && !v; ++dz)
          for (int dy = 0; dy < 2 && !v; ++dy)
            for (int dx = 0; dx < 2 && !v; ++dx) {
              int si = 2 * i + dx, sj = 2 * j + dy, sk = 2 * k + dz;
              if (in.header.inBounds(si, sj, sk) && in.at(si, sj, sk)) v = 1;
            }
        out.at(i, j, k) = v;
      }
  return out;
}

struct Pyramid {
  std::vector<Volume3D> vol;    // coarse -> fine
  std::vector<BinaryMask> mask;
};

/// Levels: finest is `finest_scale`-subsampled, each coarser one doubles.
/// Levels whose smallest extent would drop below 6 voxels are dropped.
/// The finest level is smoothed by ~0.41 voxel, the average blur trilinear
/// interpolation applies to the moving image, so the metric compares images
/// with matched sharpness instead of biasing toward lattice-aligned poses.
inline Pyramid buildPyramid(const Volume3D& v, const BinaryMask& m,
                            int levels, int finest_scale) {
  Pyramid p;
  Volume3D cur = v;
  BinaryMask curm = m;
  for (int s = 1; s < finest_scale; s *= 2) {
    cur = downsample2(cur);
    curm = downsampleMask2(curm, cur.header);
  }
  cur = gaussianSmoothVoxels(cur, {0.41, 0.41, 0.41});
  p.vol.push_back(cur);
  p.mask.push_back(curm);
  for (int l = 1; l < levels; ++l) {
    int min_dim = *std::min_element(p.vol.back().header.dim.begin(),
                                    p.vol.back().header.dim.end());
    if (min_dim / 2 < 6) break;
    p.vol.push_back(downsample2(p.vol.back()));
    p.mask.push_back(downsampleMask2(p.mask.back(), p.vol.back().header));
  }
  std::reverse(p.vol.begin(), p.vol.end());
  std::reverse(p.mask.begin(), p.mask.end());
  return p;
}

/// Moving image bundle: intensities plus world-space gradient volumes. The
/// image is pre-smoothed by the same 0.41 voxel applied to the fixed pyramid
/// so both metric inputs carry matched sharpness; otherwise the optimizer
/// earns metric by sculpting sub-voxel interpolation blur instead of aligning
/// content.
struct MovingBundle {
  Volume3D smoothed;
  const Volume3D* image;
  std::array<Volume3D, 3> grad;  // d(intensity)/d(world mm)
  Eigen::Matrix3d world_to_voxel;
  Eigen::Vector3d origin;

  explicit MovingBundle(const Volume3D& moving_raw)
      : smoothed(gaussianSmoothVoxels(moving_raw, {0.41, 0.41, 0.41})),
        image(&smoothed) {
    const Volume3D& m = smoothed;
    Eigen::Matrix3d lin = m.header.affine.topLeftCorner<3, 3>();
    world_to_voxel = lin.inverse();
    origin = m.header.affine.topRightCorner<3, 1>();
    const auto& d = m.header.dim;
    Eigen::Matrix3d vox_grad_to_world = world_to_voxel.transpose();
    for (auto& g : grad) g = Volume3D(m.header);
    for (int k = 0; k < d[2]; ++k)
      for (int j = 0; j < d[1]; ++j)
        for (int i = 0; i < d[0]; ++i) {
          Eigen::Vector3d gv;
          int c[3] = {i, j, k};
          for (int ax = 0; ax < 3; ++ax) {
            int lo = std::max(c[ax] - 1, 0), hi = std::min(c[ax] + 1, d[ax] - 1);
            int pc[3] = {i, j, k}, mc[3] = {i, j, k};
            pc[ax] = hi;
            mc[ax] = lo;
            double span = hi - lo;
            gv[ax] = span > 0 ? (m.at(pc[0], pc[1], pc[2]) -
                                 m.at(mc[0], mc[1], mc[2])) / span
                              : 0.0;
          }
          Eigen::Vector3d gw = vox_grad_to_world * gv;
          size_t idx = m.header.index(i, j, k);
          for (int ax = 0; ax < 3; ++ax)
            grad[ax].data[idx] = static_cast<float>(gw[ax]);
        }
  }

  /// Samples intensity and world gradient at a world point in one pass.
  void sample(const Eigen::Vector3d& world, double* value,
              Eigen::Vector3d* g) const {
    Eigen::Vector3d p = world_to_voxel * (world - origin);
    const auto& d = image->header.dim;
    *value = 0.0;
    if (g) g->setZero();
    if (p[0] <= -1.0 || p[1] <= -1.0 || p[2] <= -1.0 || p[0] >= d[0] ||
        p[1] >= d[1] || p[2] >= d[2])
      return;
    int i0 = static_cast<int>(std::floor(p[0]));
    int j0 = static_cast<int>(std::floor(p[1]));
    int k0 = static_cast<int>(std::floor(p[2]));
    double fx = p[0] - i0, fy = p[1] - j0, fz = p[2] - k0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          int i = i0 + dx, j = j0 + dy, k = k0 + dz;
          if (!image->header.inBounds(i, j, k)) continue;
          double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) *
                     (dz ? fz : 1.0 - fz);
          size_t idx = image->header.index(i, j, k);
          *value += w * image->data[idx];
          if (g)
            *g += w * Eigen::Vector3d(grad[0].data[idx], grad[1].data[idx],
                                      grad[2].data[idx]);
        }
  }
};

/// Intensity-weighted centroid in world mm over the mask.
inline Eigen::Vector3d centerOfMass(const Volume3D& v, const BinaryMask* mask) {
  double wsum = 0;
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  const auto& d = v.header.dim;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        size_t idx = v.header.index(i, j, k);
        if (mask && !mask->data[idx]) continue;
        double w = std::abs(v.data[idx]);
        acc += w * v.header.voxelToWorld(Eigen::Vector3d(i, j, k));
        wsum += w;
      }
  if (wsum <= 0)
    throw Error(ErrorKind::parameter, "zero-mass image in registration");
  return acc / wsum;
}

struct AffineState {
  Eigen::Matrix3d B = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  Eigen::Vector3d c = Eigen::Vector3d::Zero();  // rotation center (fixed COM)

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return B * (x - c) + c + t;
  }
  AffineTransform toTransform() const {
    AffineTransform a;
    a.matrix = B;
    a.translation = t + c - B * c;
    return a;
  }
};

/// Warps the moving bundle onto the fixed grid through the current affine
/// state; optionally collects sampled world gradients for masked voxels.
inline void warpAffine(const Volume3D& fixed, const MovingBundle& mov,
                       const AffineState& st, Volume3D* warped,
                       std::vector<Eigen::Vector3d>* grads,
                       std::vector<Eigen::Vector3d>* centered) {
  const auto& d = fixed.header.dim;
  if (grads) grads->resize(fixed.header.nvox());
  if (centered) centered->resize(fixed.header.nvox());
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        size_t idx = fixed.header.index(i, j, k);
        Eigen::Vector3d w = fixed.header.voxelToWorld(Eigen::Vector3d(i, j, k));
        Eigen::Vector3d p = st.apply(w);
        double val;
        Eigen::Vector3d g;
        mov.sample(p, &val, grads ? &g : nullptr);
        warped->data[idx] = static_cast<float>(val);
        if (grads) (*grads)[idx] = g;
        if (centered) (*centered)[idx] = st.B * (w - st.c);
      }
}

/// One gradient-ascent stage over a fixed dof set at one pyramid level.
/// Returns the best metric reached; updates the state in place.
inline double optimizeAffineStage(const Volume3D& fixed, const BinaryMask& mask,
                                  const MovingBundle& mov, AffineState& st,
                                  AffineDof dof,
                                  const RegistrationParams& params,
                                  int* iterations_used,
                                  std::vector<double>* trace) {
  const size_t n = fixed.header.nvox();
  Volume3D warped(fixed.header);
  std::vector<Eigen::Vector3d> grads, centered;

  // characteristic radius for scaling rotation/linear gradients
  double r2_acc = 0;
  size_t n_mask = 0;
  const auto& d = fixed.header.dim;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        size_t idx = fixed.header.index(i, j, k);
        if (!mask.data[idx]) continue;
        ++n_mask;
        Eigen::Vector3d w = fixed.header.voxelToWorld(Eigen::Vector3d(i, j, k));
        r2_acc += (w - st.c).squaredNorm();
      }
  if (n_mask == 0) throw Error(ErrorKind::parameter, "empty registration mask");
  double radius2 = std::max(r2_acc / static_cast<double>(n_mask), 1.0);

  warpAffine(fixed, mov, st, &warped, &grads, &centered);
  MetricEval ev = metricEval(fixed, warped, &mask, params.metric, true);
  double best = ev.value;
  if (trace) trace->push_back(best);
  double step = params.step_length;
  const double min_step = params.step_length / 1024.0;
  int stall = 0;

  for (int iter = 0; iter < params.max_iterations_per_level; ++iter) {
    if (iterations_used) ++(*iterations_used);
    // parameter gradient
    Eigen::Vector3d g_t = Eigen::Vector3d::Zero();
    Eigen::Vector3d g_w = Eigen::Vector3d::Zero();
    Eigen::Matrix3d g_m = Eigen::Matrix3d::Zero();
    for (size_t idx = 0; idx < n; ++idx) {
      double gv = ev.grad[idx];
      if (gv == 0.0) continue;
      const Eigen::Vector3d& mg = grads[idx];
      const Eigen::Vector3d& y = centered[idx];
      g_t += gv * mg;
      if (dof == AffineDof::rigid6)
        g_w += gv * y.cross(mg);
      else
        g_m += gv * mg * y.transpose();
    }
    // precondition to homogeneous mm units
    Eigen::Vector3d d_t = g_t;
    Eigen::Vector3d d_w = g_w / radius2;
    Eigen::Matrix3d d_m = g_m / radius2;
    // max displacement induced by a unit step, probed at mask radius
    double rad = std::sqrt(radius2);
    double disp = d_t.norm();
    if (dof == AffineDof::rigid6)
      disp += d_w.norm() * rad;
    else
      disp += d_m.operatorNorm() * rad;
    if (disp < 1e-14) break;

    bool accepted = false;
    while (step >= min_step) {
      double lambda = step / disp;
      AffineState cand = st;
      if (dof == AffineDof::rigid6) {
        Eigen::Vector3d axis = d_w * lambda;
        double angle = axis.norm();
        Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
        if (angle > 1e-14)
          r = Eigen::AngleAxisd(angle, axis / angle).toRotationMatrix();
        cand.B = r * st.B;
      } else {
        cand.B = (Eigen::Matrix3d::Identity() + d_m * lambda) * st.B;
      }
      cand.t = st.t + d_t * lambda;
      if (std::abs(cand.B.determinant()) < 1e-8) {
        step *= 0.5;
        continue;
      }
      Volume3D cand_warped(fixed.header);
      warpAffine(fixed, mov, cand, &cand_warped, nullptr, nullptr);
      double val =
          metricEval(fixed, cand_warped, &mask, params.metric, false).value;
      if (val > best) {
        double rel = std::abs(val - best) / std::max(std::abs(best), 1e-12);
        st = cand;
        best = val;
        if (trace) trace->push_back(best);
        accepted = true;
        step = std::min(step * 1.5, params.step_length);
        stall = (rel < params.convergence_tol) ? stall + 1 : 0;
        break;
      }
      step *= 0.5;
    }
    if (!accepted || stall >= 3) break;
    warpAffine(fixed, mov, st, &warped, &grads, &centered);
    ev = metricEval(fixed, warped, &mask, params.metric, true);
  }
  return best;
}

}  // namespace detail

/// 12-parameter affine registration: center-of-mass initialization, a rigid
/// 6-dof pass, then full 12-dof, coarse to fine. Deterministic.
inline AffineResult registerAffine(const Volume3D& fixed,
                                   const Volume3D& moving,
                                   const BinaryMask& fixed_mask,
                                   const RegistrationParams& params,
                                   ObjectiveTrace* trace = nullptr) {
  params.validate();
  if (!fixed.header.sameGrid(fixed_mask.header))
    throw Error(ErrorKind::shape, "mask grid differs from fixed grid");
  if (fixed_mask.count() == 0)
    throw Error(ErrorKind::parameter, "empty fixed mask");

  detail::MovingBundle mov(moving);
  detail::Pyramid pyr = detail::buildPyramid(fixed, fixed_mask,
                                             params.pyramid_levels,
                                             params.finest_scale);

  detail::AffineState st;
  // both centroids unmasked so self-registration starts exactly at identity
  Eigen::Vector3d com_f = detail::centerOfMass(fixed, nullptr);
  Eigen::Vector3d com_m = detail::centerOfMass(moving, nullptr);
  st.c = com_f;
  st.t = com_m - com_f;  // pull-back maps fixed COM onto moving COM

  AffineResult result;
  double prev_best = -1e300;
  for (int pass = 0; pass < 2; ++pass) {
    AffineDof dof = pass == 0 ? AffineDof::rigid6 : AffineDof::full12;
    if (dof == AffineDof::full12 && params.affine_dof == AffineDof::rigid6)
      break;
    for (size_t l = 0; l < pyr.vol.size(); ++l) {
      std::vector<double>* level_trace = nullptr;
      if (trace) {
        trace->levels.emplace_back();
        level_trace = &trace->levels.back();
      }
      double best = detail::optimizeAffineStage(pyr.vol[l], pyr.mask[l], mov,
                                               st, dof, params,
                                               &result.iterations, level_trace);
      prev_best = best;
    }
  }
  {
    // polish at the finest level with small steps to settle the optimum
    RegistrationParams fine = params;
    fine.step_length = params.step_length / 8.0;
    std::vector<double>* level_trace = nullptr;
    if (trace) {
      trace->levels.emplace_back();
      level_trace = &trace->levels.back();
    }
    prev_best = detail::optimizeAffineStage(
        pyr.vol.back(), pyr.mask.back(), mov, st, params.affine_dof, fine,
        &result.iterations, level_trace);
  }
  result.metric = prev_best;
  result.transform = st.toTransform();
  result.transform.validate();
  result.converged =
      result.iterations <
      2 * static_cast<int>(pyr.vol.size()) * params.max_iterations_per_level;
  return result;
}

/// Greedy demons on top of an affine initialization. The returned chain is
/// [field, init]: points go through the field (on the fixed grid) and then
/// the affine, so the field stays in fixed space.
inline CompositeTransform registerDiffeomorphic(
    const Volume3D& fixed, const Volume3D& moving, const AffineTransform& init,
    const RegistrationParams& params,
    const BinaryMask* fixed_mask = nullptr,
    ObjectiveTrace* trace = nullptr) {
  params.validate();
  BinaryMask all(fixed.header, 1);
  const BinaryMask& fm = fixed_mask ? *fixed_mask : all;
  if (!fixed.header.sameGrid(fm.header))
    throw Error(ErrorKind::shape, "mask grid differs from fixed grid");

  detail::MovingBundle mov(moving);
  detail::Pyramid pyr =
      detail::buildPyramid(fixed, fm, params.pyramid_levels,
                           params.finest_scale);

  DisplacementField field(pyr.vol[0].header);
  const Eigen::Matrix3d init_lin_t = init.matrix.transpose();

  for (size_t l = 0; l < pyr.vol.size(); ++l) {
    const Volume3D& fx = pyr.vol[l];
    const BinaryMask& mk = pyr.mask[l];
    const size_t n = fx.header.nvox();
    if (l > 0) {
      // upsample: sample the coarse field at the finer grid's world points
      DisplacementField fine(fx.header);
      for (int k = 0; k < fx.header.dim[2]; ++k)
        for (int j = 0; j < fx.header.dim[1]; ++j)
          for (int i = 0; i < fx.header.dim[0]; ++i) {
            Eigen::Vector3d w =
                fx.header.voxelToWorld(Eigen::Vector3d(i, j, k));
            Eigen::Vector3d u = field.displacementAt(w);
            size_t idx = fx.header.index(i, j, k);
            for (int ax = 0; ax < 3; ++ax)
              fine.u[ax][idx] = static_cast<float>(u[ax]);
          }
      field = std::move(fine);
    }

    // world coordinates of this level's voxels, reused every iteration
    std::vector<Eigen::Vector3d> world(n);
    for (int k = 0; k < fx.header.dim[2]; ++k)
      for (int j = 0; j < fx.header.dim[1]; ++j)
        for (int i = 0; i < fx.header.dim[0]; ++i)
          world[fx.header.index(i, j, k)] =
              fx.header.voxelToWorld(Eigen::Vector3d(i, j, k));

    auto warpThrough = [&](const DisplacementField& f, Volume3D* out,
                           std::vector<Eigen::Vector3d>* grads) {
      if (grads) grads->resize(n);
      for (size_t idx = 0; idx < n; ++idx) {
        Eigen::Vector3d p =
            init.apply(world[idx] + f.displacementAt(world[idx]));
        double val;
        Eigen::Vector3d g;
        mov.sample(p, &val, grads ? &g : nullptr);
        out->data[idx] = static_cast<float>(val);
        if (grads) (*grads)[idx] = g;
      }
    };

    Volume3D warped(fx.header);
    std::vector<Eigen::Vector3d> grads;
    warpThrough(field, &warped, &grads);
    detail::MetricEval ev =
        detail::metricEval(fx, warped, &mk, params.metric, true);
    double best = ev.value;
    std::vector<double>* level_trace = nullptr;
    if (trace) {
      trace->levels.emplace_back();
      level_trace = &trace->levels.back();
      level_trace->push_back(best);
    }
    double step = params.step_length;
    const double min_step = params.step_length / 256.0;
    int stall = 0;

    for (int iter = 0; iter < params.max_iterations_per_level; ++iter) {
      // force field: dObj/du(x) = init_lin^T * gradM(phi(x)) * G(x)
      std::array<Volume3D, 3> force{Volume3D(fx.header), Volume3D(fx.header),
                                    Volume3D(fx.header)};
      double max_force = 0;
      for (size_t idx = 0; idx < n; ++idx) {
        Eigen::Vector3d f = init_lin_t * grads[idx] * ev.grad[idx];
        for (int ax = 0; ax < 3; ++ax)
          force[ax].data[idx] = static_cast<float>(f[ax]);
      }
      for (size_t idx = 0; idx < n; ++idx) {
        double m2 = 0;
        for (int ax = 0; ax < 3; ++ax)
          m2 += static_cast<double>(force[ax].data[idx]) * force[ax].data[idx];
        max_force = std::max(max_force, m2);
      }
      max_force = std::sqrt(max_force);
      if (max_force < 1e-14) break;
      // soft local normalization before smoothing: weak-texture regions
      // advance at a rate comparable to high-contrast boundaries instead of
      // being throttled by them; the fluid smoothing afterwards keeps the
      // update field free of normalization kinks
      const double soft = 0.05 * max_force;
      for (size_t idx = 0; idx < n; ++idx) {
        double m2 = 0;
        for (int ax = 0; ax < 3; ++ax)
          m2 += static_cast<double>(force[ax].data[idx]) * force[ax].data[idx];
        double scale = 1.0 / (std::sqrt(m2) + soft);
        for (int ax = 0; ax < 3; ++ax)
          force[ax].data[idx] = static_cast<float>(force[ax].data[idx] * scale);
      }
      for (auto& f : force)
        gaussianSmoothInPlaceMm(f, params.fluid_sigma_mm);
      max_force = 0.0;
      for (size_t idx = 0; idx < n; ++idx) {
        double m2 = 0;
        for (int ax = 0; ax < 3; ++ax)
          m2 += static_cast<double>(force[ax].data[idx]) * force[ax].data[idx];
        max_force = std::max(max_force, m2);
      }
      max_force = std::sqrt(max_force);
      if (max_force < 1e-14) break;

      bool accepted = false;
      bool jacobian_blocked = false;
      while (step >= min_step) {
        double tau = step / max_force;
        // compositive update: u'(x) = u(x + tau*v(x)) + tau*v(x)
        DisplacementField cand(fx.header);
        for (size_t idx = 0; idx < n; ++idx) {
          Eigen::Vector3d v(force[0].data[idx], force[1].data[idx],
                            force[2].data[idx]);
          v *= tau;
          Eigen::Vector3d u = field.displacementAt(world[idx] + v) + v;
          for (int ax = 0; ax < 3; ++ax)
            cand.u[ax][idx] = static_cast<float>(u[ax]);
        }
        if (cand.positiveJacobianFraction(&mk) < 0.995) {
          jacobian_blocked = true;
          step *= 0.5;
          continue;
        }
        jacobian_blocked = false;
        Volume3D cand_warped(fx.header);
        warpThrough(cand, &cand_warped, nullptr);
        double val =
            detail::metricEval(fx, cand_warped, &mk, params.metric, false)
                .value;
        if (val > best) {
          double rel = (val - best) / std::max(std::abs(best), 1e-12);
          field = std::move(cand);
          best = val;
          if (level_trace) level_trace->push_back(best);
          accepted = true;
          step = std::min(step * 1.5, params.step_length);
          stall = (rel < params.convergence_tol) ? stall + 1 : 0;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        if (jacobian_blocked)
          throw Error(ErrorKind::registration,
                      "positive-Jacobian invariant unrecoverable at minimum "
                      "step");
        break;  // no improving step: level converged
      }
      // unconditional diffusion-like regularization of the accumulated
      // field; the next line search ascends from the regularized baseline
      if (params.diffusion_sigma_mm > 0) {
        DisplacementField reg = field;
        for (int ax = 0; ax < 3; ++ax) {
          Volume3D comp(fx.header);
          comp.data = reg.u[ax];
          gaussianSmoothInPlaceMm(comp, params.diffusion_sigma_mm);
          reg.u[ax] = comp.data;
        }
        // smoothing must not break the diffeomorphism certificate
        if (reg.positiveJacobianFraction(&mk) >= 0.995) field = std::move(reg);
      }
      warpThrough(field, &warped, &grads);
      ev = detail::metricEval(fx, warped, &mk, params.metric, true);
      best = ev.value;
      if (stall >= 5) break;
    }
  }

  // return the field on the full-resolution fixed grid
  DisplacementField full(fixed.header);
  for (int k = 0; k < fixed.header.dim[2]; ++k)
    for (int j = 0; j < fixed.header.dim[1]; ++j)
      for (int i = 0; i < fixed.header.dim[0]; ++i) {
        Eigen::Vector3d w =
            fixed.header.voxelToWorld(Eigen::Vector3d(i, j, k));
        Eigen::Vector3d u = field.displacementAt(w);
        size_t idx = fixed.header.index(i, j, k);
        for (int ax = 0; ax < 3; ++ax)
          full.u[ax][idx] = static_cast<float>(u[ax]);
      }
  if (full.positiveJacobianFraction(&fm) < 0.995)
    throw Error(ErrorKind::registration,
                "returned field fails the positive-Jacobian certificate");

  CompositeTransform out;
  out.chain.emplace_back(std::move(full));
  out.chain.emplace_back(init);
  return out;
}

// --- presets ----------------------------------------------------------------

enum class RegPreset { quick, full };

inline RegistrationParams affineParams(MetricKind metric,
                                       RegPreset preset = RegPreset::full) {
  RegistrationParams p;
  p.metric = metric;
  p.pyramid_levels = 3;
  p.max_iterations_per_level = preset == RegPreset::quick ? 25 : 50;
  return p;
}

inline RegistrationParams diffeoParams(MetricKind metric,
                                       RegPreset preset = RegPreset::full) {
  RegistrationParams p;
  p.metric = metric;
  if (preset == RegPreset::quick) {
    p.pyramid_levels = 1;   // one coarse level only
    p.finest_scale = 2;
    p.max_iterations_per_level = 25;
  } else {
    p.pyramid_levels = 3;
    p.max_iterations_per_level = 50;
  }
  return p;
}

/// Affine followed by demons refinement; the workhorse behind the
/// augmentation steps and template normalization.
inline CompositeTransform registerPair(const Volume3D& fixed,
                                       const Volume3D& moving,
                                       const BinaryMask& fixed_mask,
                                       MetricKind metric, RegPreset preset) {
  AffineResult aff =
      registerAffine(fixed, moving, fixed_mask, affineParams(metric, preset));
  return registerDiffeomorphic(fixed, moving, aff.transform,
                               diffeoParams(metric, preset), &fixed_mask);
}

}  // namespace warpaug

#endif  // WARPAUG_REGISTRATION_HPP
