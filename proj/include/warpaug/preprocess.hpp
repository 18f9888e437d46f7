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

/// @file preprocess.hpp
/// @brief Uniform fMRI preprocessing: affine frame realignment, brain
///        extraction, direct EPI-to-template normalization, Gaussian
///        smoothing. The identical stage sequence runs for original and
///        synthetic data; the stage manifest records it.

#ifndef WARPAUG_PREPROCESS_HPP
#define WARPAUG_PREPROCESS_HPP

#include "warpaug/brainmask.hpp"
#include "warpaug/registration.hpp"
#include "warpaug/smoothing.hpp"

namespace warpaug {

struct MotionTrace {
  // per frame: 9 matrix entries row-major, then 3 translations (mm), the
  // pull-back map from reference space to that frame's space
  std::vector<std::array<double, 12>> params;
  std::vector<double> framewise_displacement_mm;  // vs previous frame
  double max_framewise_displacement_mm = 0.0;
};

struct PreprocessConfig {
  double smoothing_fwhm_mm = 6.0;
  std::shared_ptr<const Volume3D> template_epi;
  int realign_passes = 2;
  AffineDof realign_dof = AffineDof::full12;  // rigid6 available as a preset
  RegistrationParams realign_reg;
  RegistrationParams normalize_affine = affineParams(MetricKind::lncc);
  RegistrationParams normalize_diffeo = diffeoParams(MetricKind::lncc);
  MaskParams fmri_mask = fmriMaskParams();
  unsigned jobs = 0;

  PreprocessConfig() {
    realign_reg = affineParams(MetricKind::lncc);
    realign_reg.pyramid_levels = 2;
    realign_reg.max_iterations_per_level = 15;
    realign_reg.step_length = 1.0;
  }

  void validate() const {
    if (!(smoothing_fwhm_mm > 0))
      throw Error(ErrorKind::parameter, "smoothing fwhm must be positive");
    if (realign_passes < 1)
      throw Error(ErrorKind::parameter, "realign needs >= 1 pass");
  }

  /// Stage manifest: the uniformity invariant compares these line-for-line
  /// between original and synthetic runs.
  std::vector<std::string> stageManifest() const {
    auto reg = [](const RegistrationParams& p) {
      return strCat(p.metric == MetricKind::lncc ? "lncc" : "mi", "/L",
                    p.pyramid_levels, "/i", p.max_iterations_per_level, "/s",
                    p.step_length);
    };
    return {
        strCat("realign passes=", realign_passes, " dof=",
               realign_dof == AffineDof::rigid6 ? 6 : 12, " ",
               reg(realign_reg)),
        strCat("mask closing_mm=", fmri_mask.closing_radius_mm),
        strCat("normalize affine=", reg(normalize_affine), " diffeo=",
               reg(normalize_diffeo), " fluid=", normalize_diffeo.fluid_sigma_mm,
               " diffusion=", normalize_diffeo.diffusion_sigma_mm),
        strCat("smooth fwhm_mm=", smoothing_fwhm_mm),
    };
  }
};

struct RealignResult {
  Volume4D fmri;
  MotionTrace trace;
};

/// Pass 1 registers every frame to frame 0; the reference is then recomputed
/// as the mean of realigned frames and later passes re-register the original
/// frames to it. Output frames are resampled exactly once from the originals
/// through the final per-frame transform.
inline RealignResult realignFrames(const Volume4D& fmri, int passes,
                                   const PreprocessConfig& config = {}) {
  if (fmri.frames.size() < 2)
    throw Error(ErrorKind::parameter, "realign needs at least two frames");
  const int n = static_cast<int>(fmri.frames.size());
  const VolumeHeader grid = fmri.frames[0].header;

  RegistrationParams reg = config.realign_reg;
  reg.affine_dof = config.realign_dof;

  std::vector<AffineTransform> transforms(n);
  Volume3D reference = fmri.frames[0];
  for (int pass = 0; pass < passes; ++pass) {
    BinaryMask ref_mask;
    try {
      ref_mask = extractBrain(reference, config.fmri_mask);
    } catch (const Error& e) {
      throw Error(ErrorKind::preprocessing,
                  strCat("realign reference masking failed: ", e.what()));
    }
    parallelFor(
        static_cast<size_t>(n),
        [&](size_t f) {
          try {
            AffineResult res = registerAffine(reference, fmri.frames[f],
                                              ref_mask, reg);
            transforms[f] = res.transform;
          } catch (const Error& e) {
            throw Error(ErrorKind::preprocessing,
                        strCat("realign failed at frame ", f, ": ", e.what()));
          }
        },
        config.jobs);
    if (pass + 1 < passes) {
      // updated reference: mean of realigned frames
      Volume4D tmp(grid, n, fmri.header.time_step);
      for (int f = 0; f < n; ++f)
        tmp.frames[f] =
            resample(fmri.frames[f], CompositeTransform(transforms[f]), grid);
      reference = meanFrame(tmp);
    }
  }

  RealignResult out;
  out.fmri = Volume4D(grid, n, fmri.header.time_step);
  parallelFor(
      static_cast<size_t>(n),
      [&](size_t f) {
        out.fmri.frames[f] =
            resample(fmri.frames[f], CompositeTransform(transforms[f]), grid);
      },
      config.jobs);

  out.trace.params.resize(n);
  for (int f = 0; f < n; ++f) {
    const auto& t = transforms[f];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        out.trace.params[f][3 * r + c] = t.matrix(r, c);
    for (int d = 0; d < 3; ++d)
      out.trace.params[f][9 + d] = t.translation[d];
  }
  // framewise displacement: largest corner motion between successive frames
  std::array<Eigen::Vector3d, 8> corners;
  {
    int c = 0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          corners[c++] = grid.voxelToWorld(Eigen::Vector3d(
              dx * (grid.dim[0] - 1), dy * (grid.dim[1] - 1),
              dz * (grid.dim[2] - 1)));
  }
  out.trace.framewise_displacement_mm.assign(n, 0.0);
  for (int f = 1; f < n; ++f) {
    double fd = 0;
    for (const auto& p : corners)
      fd = std::max(fd,
                    (transforms[f].apply(p) - transforms[f - 1].apply(p))
                        .norm());
    out.trace.framewise_displacement_mm[f] = fd;
    out.trace.max_framewise_displacement_mm =
        std::max(out.trace.max_framewise_displacement_mm, fd);
  }
  return out;
}

/// Registers the mean frame directly to the EPI template (affine + demons,
/// LNCC) and resamples all frames onto the template grid in one pass.
inline Volume4D normalizeToTemplate(const Volume4D& fmri,
                                    const Volume3D& template_epi,
                                    const PreprocessConfig& config = {}) {
  Volume3D mean = meanFrame(fmri);
  BinaryMask template_mask, mean_mask;
  try {
    template_mask = extractBrain(template_epi, config.fmri_mask);
    mean_mask = extractBrain(mean, config.fmri_mask);
  } catch (const Error& e) {
    throw Error(ErrorKind::preprocessing,
                strCat("normalization masking failed: ", e.what()));
  }
  Volume3D fixed = applyMask(template_epi, template_mask);
  Volume3D moving = applyMask(mean, mean_mask);
  CompositeTransform chain;
  try {
    AffineResult aff =
        registerAffine(fixed, moving, template_mask, config.normalize_affine);
    chain = registerDiffeomorphic(fixed, moving, aff.transform,
                                  config.normalize_diffeo, &template_mask);
  } catch (const Error& e) {
    throw Error(ErrorKind::preprocessing,
                strCat("template normalization failed: ", e.what()));
  }
  return resample(fmri, chain, template_epi.header);
}

struct PreprocessResult {
  Volume4D fmri;
  MotionTrace motion;
  std::vector<std::string> stages;  // executed stage manifest
};

/// realign -> brain-extract and mask the mean -> normalize -> smooth.
inline PreprocessResult preprocessPipeline(const Volume4D& fmri,
                                           const PreprocessConfig& config) {
  config.validate();
  if (!config.template_epi)
    throw Error(ErrorKind::config, "preprocess needs a template volume");

  RealignResult realigned = realignFrames(fmri, config.realign_passes, config);

  Volume3D mean = meanFrame(realigned.fmri);
  BinaryMask mask;
  try {
    mask = extractBrain(mean, config.fmri_mask);
  } catch (const Error& e) {
    throw Error(ErrorKind::preprocessing,
                strCat("mean-frame extraction failed: ", e.what()));
  }
  Volume4D masked = applyMask(realigned.fmri, mask);

  Volume4D normalized =
      normalizeToTemplate(masked, *config.template_epi, config);

  PreprocessResult out;
  out.fmri = Volume4D(normalized.header.spatial(),
                      static_cast<int>(normalized.frames.size()),
                      normalized.header.time_step);
  parallelFor(
      normalized.frames.size(),
      [&](size_t f) {
        out.fmri.frames[f] =
            gaussianSmooth(normalized.frames[f], config.smoothing_fwhm_mm);
      },
      config.jobs);
  out.motion = std::move(realigned.trace);
  out.stages = config.stageManifest();
  return out;
}

}  // namespace warpaug

#endif  // WARPAUG_PREPROCESS_HPP
