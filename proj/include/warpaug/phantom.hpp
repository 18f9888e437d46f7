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

/// @file phantom.hpp
/// @brief Synthetic cohort generator with closed-form ground truth: template
///        anatomy with three tissue levels and broadband texture, per-subject
///        smooth sinusoidal deformations with guaranteed positive Jacobian,
///        block-design BOLD signal with planted regional amplitudes, rigid
///        per-frame motion, and a linear outcome model.
///
/// Everything a subject image contains is evaluated analytically at arbitrary
/// world points, so oracles (landmark positions, true masks, planted betas)
/// are exact rather than resampled.

#ifndef WARPAUG_PHANTOM_HPP
#define WARPAUG_PHANTOM_HPP

#include <map>
#include <string>
#include <vector>

#include "warpaug/common.hpp"
#include "warpaug/glm.hpp"
#include "warpaug/subjects.hpp"
#include "warpaug/transform.hpp"

namespace warpaug {

namespace detail {

/// Seeded sum of random-direction cosines; broadband texture that can be
/// evaluated at any world point.
class CosineTexture {
 public:
  CosineTexture() = default;
  CosineTexture(uint64_t seed, int n_terms, double freq_min, double freq_max,
                double rms) {
    Rng rng(seed);
    std::uniform_real_distribution<double> uphase(0, 2 * M_PI), udir(-1, 1),
        ufreq(freq_min, freq_max);
    double norm = 0;
    for (int i = 0; i < n_terms; ++i) {
      Eigen::Vector3d d(udir(rng), udir(rng), udir(rng));
      while (d.norm() < 1e-3) d = {udir(rng), udir(rng), udir(rng)};
      d.normalize();
      double f = ufreq(rng);
      Term t{d * 2 * M_PI * f, uphase(rng), 1.0 / std::sqrt(f)};
      norm += 0.5 * t.amp * t.amp;
      terms_.push_back(t);
    }
    double scale = rms / std::sqrt(std::max(norm, 1e-12));
    for (auto& t : terms_) t.amp *= scale;
  }

  double operator()(const Eigen::Vector3d& w) const {
    double v = 0;
    for (const auto& t : terms_) v += t.amp * std::cos(t.k.dot(w) + t.phase);
    return v;
  }

 private:
  struct Term {
    Eigen::Vector3d k;
    double phase, amp;
  };
  std::vector<Term> terms_;
};

inline double smoothstep(double edge0, double edge1, double x) {
  double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace detail

/// Smooth displacement built from low-frequency sine-product modes; vanishes
/// on the bounding box surface. The forward map template -> subject is
/// analytic; the inverse is computed by fixed-point iteration.
class SubjectWarp {
 public:
  SubjectWarp() = default;

  /// Seeded modes scaled so the peak displacement equals `amplitude_mm`.
  /// Retries with damped modes until the Jacobian stays positive on a probe
  /// grid; gives up after five attempts.
  SubjectWarp(uint64_t seed, double amplitude_mm, Eigen::Vector3d box_lo,
              Eigen::Vector3d box_hi) {
    lo_ = box_lo;
    span_ = box_hi - box_lo;
    Rng rng(seed);
    std::uniform_int_distribution<int> ufreq(1, 2);
    std::normal_distribution<double> ucoef(0.0, 1.0);
    for (int comp = 0; comp < 3; ++comp)
      for (int m = 0; m < 4; ++m)
        modes_.push_back(
            {comp, {ufreq(rng), ufreq(rng), ufreq(rng)}, ucoef(rng)});
    if (amplitude_mm <= 0) {
      for (auto& m : modes_) m.coef = 0;
      return;
    }
    // scale to the requested peak amplitude measured on a probe grid
    double peak = probePeak();
    for (auto& m : modes_) m.coef *= amplitude_mm / std::max(peak, 1e-12);
    for (int attempt = 0; attempt < 5; ++attempt) {
      if (probeMinJacobian() > 0.05) return;
      for (auto& m : modes_) m.coef *= 0.8;
    }
    throw Error(ErrorKind::numeric,
                "deformation amplitude yields non-positive Jacobians");
  }

  Eigen::Vector3d displacement(const Eigen::Vector3d& p) const {
    Eigen::Vector3d u = Eigen::Vector3d::Zero();
    for (const auto& m : modes_) {
      double v = m.coef;
      for (int d = 0; d < 3; ++d)
        v *= std::sin(M_PI * m.freq[d] * (p[d] - lo_[d]) / span_[d]);
      u[m.component] += v;
    }
    return u;
  }

  /// template point -> subject point
  Eigen::Vector3d forward(const Eigen::Vector3d& p) const {
    return p + displacement(p);
  }

  /// subject point -> template point, fixed-point iteration
  Eigen::Vector3d inverse(const Eigen::Vector3d& x, int iters = 12) const {
    Eigen::Vector3d p = x;
    for (int i = 0; i < iters; ++i) p = x - displacement(p);
    return p;
  }

 private:
  struct Mode {
    int component;
    std::array<int, 3> freq;
    double coef;
  };
  std::vector<Mode> modes_;
  Eigen::Vector3d lo_ = Eigen::Vector3d::Zero();
  Eigen::Vector3d span_ = Eigen::Vector3d::Ones();

  double probePeak() const {
    double peak = 0;
    for (int k = 0; k <= 16; ++k)
      for (int j = 0; j <= 16; ++j)
        for (int i = 0; i <= 16; ++i) {
          Eigen::Vector3d p =
              lo_ + span_.cwiseProduct(Eigen::Vector3d(i, j, k) / 16.0);
          peak = std::max(peak, displacement(p).norm());
        }
    return peak;
  }

  double probeMinJacobian() const {
    double min_det = 1e300;
    const double h = 0.5;
    for (int k = 0; k <= 16; ++k)
      for (int j = 0; j <= 16; ++j)
        for (int i = 0; i <= 16; ++i) {
          Eigen::Vector3d p =
              lo_ + span_.cwiseProduct(Eigen::Vector3d(i, j, k) / 16.0);
          Eigen::Matrix3d jac;
          for (int d = 0; d < 3; ++d) {
            Eigen::Vector3d hp = p, hm = p;
            hp[d] += h;
            hm[d] -= h;
            jac.col(d) = (displacement(hp) - displacement(hm)) / (2 * h);
          }
          min_det = std::min(min_det,
                             (Eigen::Matrix3d::Identity() + jac).determinant());
        }
    return min_det;
  }
};

struct ActivationRegion {
  std::string landmark;
  int condition = 0;       // index into the task design's conditions
  double amplitude = 1.0;  // mean planted effect, image-intensity units
  double radius_mm = 9.0;
};

struct PhantomConfig {
  std::array<int, 3> anat_dim{32, 32, 32};
  Eigen::Vector3d anat_voxel{2.25, 2.25, 2.25};
  std::array<int, 3> func_dim{24, 24, 24};
  Eigen::Vector3d func_voxel{3.0, 3.0, 3.0};
  int n_subjects = 10;
  double deformation_amplitude_mm = 4.0;
  int n_frames = 48;
  double tr_s = 2.0;
  std::vector<ActivationRegion> activation_regions;
  double amplitude_jitter = 0.35;   // relative sd of per-subject amplitudes
  double noise_sigma = 0.05;        // BOLD noise, image units
  double motion_sigma_mm = 0.0;     // per-frame rigid motion scale
  double intensity_jitter = 0.05;   // per-subject global intensity scale sd
  std::vector<double> outcome_weights;  // one per activation region
  double outcome_noise_sd = 1.0;
  uint64_t seed = 0;

  void validate() const {
    if (n_subjects < 1)
      throw Error(ErrorKind::parameter, "need at least one subject");
    if (n_frames < 4 || !(tr_s > 0))
      throw Error(ErrorKind::parameter, "invalid frame count or TR");
    for (const auto& r : activation_regions)
      if (!std::isfinite(r.amplitude))
        throw Error(ErrorKind::parameter, "non-finite amplitude");
    if (!outcome_weights.empty() &&
        outcome_weights.size() != activation_regions.size())
      throw Error(ErrorKind::parameter,
                  "outcome weights must match region count");
  }
};

/// Default three-region, three-condition configuration.
inline PhantomConfig defaultPhantomConfig() {
  PhantomConfig c;
  c.activation_regions = {{"blob_a", 0, 1.0, 9.0},
                          {"blob_b", 1, 1.0, 9.0},
                          {"blob_c", 2, 1.0, 9.0}};
  c.outcome_weights = {-6.0, -4.0, 5.0};
  return c;
}

/// Round-robin 12 s blocks with 6 s gaps across three conditions.
inline TaskDesign defaultTaskDesign(int n_frames, double tr_s) {
  TaskDesign d;
  d.tr_s = tr_s;
  d.n_frames = n_frames;
  d.conditions = {{"cond_a", {}}, {"cond_b", {}}, {"cond_c", {}}};
  double run = n_frames * tr_s;
  int idx = 0;
  for (double t = 6.0; t + 12.0 <= run - 2.0; t += 18.0) {
    d.conditions[idx % 3].blocks.push_back({t, 12.0});
    ++idx;
  }
  if (idx < 3)
    throw Error(ErrorKind::parameter, "run too short for three conditions");
  return d;
}

struct SubjectTruth {
  SubjectWarp warp;                      // template -> subject
  std::vector<double> amplitudes;        // per activation region
  std::vector<AffineTransform> motion;   // per-frame sampling maps
  double intensity_scale = 1.0;
  double outcome_noise = 0.0;
};

struct GroundTruth {
  PhantomConfig config;
  TaskDesign task;
  DesignMatrix design;
  std::map<std::string, Eigen::Vector3d> landmarks;  // template world mm
  std::vector<SubjectTruth> subjects;
  Eigen::Vector3d brain_center = Eigen::Vector3d::Zero();
  Eigen::Vector3d brain_radii = Eigen::Vector3d::Zero();
};

struct PhantomCohort {
  std::vector<SubjectRecord> subjects;
  GroundTruth truth;
  Volume3D template_anat;  // anatomy grid, T1-like contrast
  Volume3D template_epi;   // functional grid, EPI-like contrast
};

namespace detail {

/// Analytic template: brain ellipsoid with white-matter core, a ventricle,
/// and broadband texture. Two contrast mappings share the same geometry.
class TemplateAnatomy {
 public:
  TemplateAnatomy(uint64_t seed, Eigen::Vector3d center,
                  Eigen::Vector3d radii)
      : center_(center),
        radii_(radii),
        wm_center_(center + Eigen::Vector3d(1.5, -1.0, 0.5)),
        wm_radii_(radii * 0.62),
        vent_center_(center + Eigen::Vector3d(0.0, 2.0, 1.0)),
        vent_radii_{6.0, 9.0, 7.0},
        texture_(deriveSeed(seed, "texture"), 80, 1.0 / 40.0, 1.0 / 8.0, 1.0) {
  }

  double brainRho(const Eigen::Vector3d& w) const {
    return (w - center_).cwiseQuotient(radii_).norm();
  }

  double t1(const Eigen::Vector3d& w) const {
    return compose(w, 0.62, 1.0, 0.22, 0.10);
  }

  double epi(const Eigen::Vector3d& w) const {
    return compose(w, 0.72, 0.45, 1.0, 0.08);
  }

  const Eigen::Vector3d& center() const { return center_; }
  const Eigen::Vector3d& radii() const { return radii_; }
  const Eigen::Vector3d& wmCenter() const { return wm_center_; }
  const Eigen::Vector3d& ventCenter() const { return vent_center_; }

 private:
  double compose(const Eigen::Vector3d& w, double gm, double wm, double vent,
                 double tex_scale) const {
    double rho = brainRho(w);
    if (rho > 1.05) return 0.0;
    double brain = 1.0 - detail::smoothstep(0.97, 1.03, rho);
    double rho_wm = (w - wm_center_).cwiseQuotient(wm_radii_).norm();
    double in_wm = 1.0 - detail::smoothstep(0.94, 1.06, rho_wm);
    double rho_v = (w - vent_center_).cwiseQuotient(vent_radii_).norm();
    double in_v = 1.0 - detail::smoothstep(0.85, 1.15, rho_v);
    double val = gm * (1.0 - in_wm) + wm * in_wm;
    val = val * (1.0 - in_v) + vent * in_v;
    double window = std::max(0.0, 1.0 - rho * rho);
    val += window * tex_scale * texture_(w);
    // image intensities around 0..100 keep planted BOLD amplitudes at a
    // realistic percent-level contrast against the baseline
    return brain * std::max(val, 0.0) * 100.0;
  }

  Eigen::Vector3d center_, radii_;
  Eigen::Vector3d wm_center_, wm_radii_;
  Eigen::Vector3d vent_center_, vent_radii_;
  CosineTexture texture_;
};

}  // namespace detail

/// Generates a deterministic cohort; per-subject work is parallel with
/// per-subject derived seeds, so results do not depend on scheduling.
inline PhantomCohort generateCohort(const PhantomConfig& config_in) {
  PhantomConfig config = config_in;
  config.validate();
  if (config.activation_regions.empty())
    config.activation_regions = defaultPhantomConfig().activation_regions;
  if (config.outcome_weights.empty())
    config.outcome_weights =
        std::vector<double>(config.activation_regions.size(), 0.0);

  VolumeHeader anat_h = makeHeader(config.anat_dim, config.anat_voxel);
  VolumeHeader func_h = makeHeader(config.func_dim, config.func_voxel);
  // shared world box: both grids cover the anatomy box
  Eigen::Vector3d box_lo = -0.5 * config.anat_voxel;
  Eigen::Vector3d box_hi =
      box_lo + Eigen::Vector3d(config.anat_dim[0] * config.anat_voxel[0],
                               config.anat_dim[1] * config.anat_voxel[1],
                               config.anat_dim[2] * config.anat_voxel[2]);
  Eigen::Vector3d center = 0.5 * (box_lo + box_hi);

  detail::TemplateAnatomy anatomy(deriveSeed(config.seed, "template"), center,
                                  Eigen::Vector3d(26.0, 22.0, 24.0));

  PhantomCohort out;
  out.truth.config = config;
  out.truth.task = defaultTaskDesign(config.n_frames, config.tr_s);
  out.truth.design = buildDesign(out.truth.task);
  out.truth.brain_center = anatomy.center();
  out.truth.brain_radii = anatomy.radii();
  out.truth.landmarks["brain_center"] = anatomy.center();
  out.truth.landmarks["wm_center"] = anatomy.wmCenter();
  out.truth.landmarks["vent_center"] = anatomy.ventCenter();
  out.truth.landmarks["blob_a"] = anatomy.center() + Eigen::Vector3d(10, 6, -4);
  out.truth.landmarks["blob_b"] =
      anatomy.center() + Eigen::Vector3d(-11, -5, 5);
  out.truth.landmarks["blob_c"] =
      anatomy.center() + Eigen::Vector3d(2, -10, -7);

  for (const auto& r : config.activation_regions)
    if (!out.truth.landmarks.count(r.landmark))
      throw Error(ErrorKind::lookup, "unknown landmark: " + r.landmark);

  // render templates
  out.template_anat = Volume3D(anat_h);
  for (int k = 0; k < anat_h.dim[2]; ++k)
    for (int j = 0; j < anat_h.dim[1]; ++j)
      for (int i = 0; i < anat_h.dim[0]; ++i)
        out.template_anat.at(i, j, k) = static_cast<float>(
            anatomy.t1(anat_h.voxelToWorld(Eigen::Vector3d(i, j, k))));
  out.template_epi = Volume3D(func_h);
  for (int k = 0; k < func_h.dim[2]; ++k)
    for (int j = 0; j < func_h.dim[1]; ++j)
      for (int i = 0; i < func_h.dim[0]; ++i)
        out.template_epi.at(i, j, k) = static_cast<float>(
            anatomy.epi(func_h.voxelToWorld(Eigen::Vector3d(i, j, k))));

  const auto& regions = config.activation_regions;
  const Eigen::MatrixXd& X = out.truth.design.X;

  out.truth.subjects.resize(config.n_subjects);
  out.subjects.resize(config.n_subjects);

  parallelFor(config.n_subjects, [&](size_t s) {
    uint64_t sub_seed = deriveSeed(config.seed, "subject/" + std::to_string(s));
    Rng rng(sub_seed);
    SubjectTruth truth;
    truth.warp = SubjectWarp(deriveSeed(sub_seed, "warp"),
                             config.deformation_amplitude_mm, box_lo, box_hi);
    std::normal_distribution<double> njit(0.0, 1.0);
    truth.intensity_scale =
        std::max(0.5, 1.0 + config.intensity_jitter * njit(rng));
    for (const auto& r : regions) {
      double a = r.amplitude *
                 std::max(0.15, 1.0 + config.amplitude_jitter * njit(rng));
      truth.amplitudes.push_back(a);
    }
    // per-frame rigid motion; frame 0 stays put
    truth.motion.resize(config.n_frames);
    for (int f = 0; f < config.n_frames; ++f) {
      AffineTransform m;
      if (f > 0 && config.motion_sigma_mm > 0) {
        Eigen::Vector3d axis(njit(rng), njit(rng), njit(rng));
        axis.normalize();
        double angle = njit(rng) * config.motion_sigma_mm * 0.3 * M_PI / 180.0;
        Eigen::Matrix3d r = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
        Eigen::Vector3d t(njit(rng) * config.motion_sigma_mm,
                          njit(rng) * config.motion_sigma_mm,
                          njit(rng) * config.motion_sigma_mm);
        m.matrix = r;
        m.translation = center - r * center + t;
      }
      truth.motion[f] = m;
    }

    // structural image: template pulled through the inverse warp
    auto smri = std::make_shared<Volume3D>(anat_h);
    for (int k = 0; k < anat_h.dim[2]; ++k)
      for (int j = 0; j < anat_h.dim[1]; ++j)
        for (int i = 0; i < anat_h.dim[0]; ++i) {
          Eigen::Vector3d x = anat_h.voxelToWorld(Eigen::Vector3d(i, j, k));
          Eigen::Vector3d p = truth.warp.inverse(x);
          smri->at(i, j, k) =
              static_cast<float>(anatomy.t1(p) * truth.intensity_scale);
        }

    // functional frames: EPI baseline + planted responses + noise + motion
    std::vector<Eigen::Vector3d> region_centers;
    for (const auto& r : regions)
      region_centers.push_back(out.truth.landmarks.at(r.landmark));
    auto fmri = std::make_shared<Volume4D>(func_h, config.n_frames, config.tr_s);
    std::normal_distribution<double> noise(0.0, config.noise_sigma);
    const bool has_motion = config.motion_sigma_mm > 0;
    // template-space coordinates cached when frames share sampling points
    std::vector<Eigen::Vector3d> cached(func_h.nvox());
    if (!has_motion) {
      for (int k = 0; k < func_h.dim[2]; ++k)
        for (int j = 0; j < func_h.dim[1]; ++j)
          for (int i = 0; i < func_h.dim[0]; ++i) {
            Eigen::Vector3d x = func_h.voxelToWorld(Eigen::Vector3d(i, j, k));
            cached[func_h.index(i, j, k)] = truth.warp.inverse(x);
          }
    }
    for (int f = 0; f < config.n_frames; ++f) {
      Volume3D& frame = fmri->frames[f];
      for (int k = 0; k < func_h.dim[2]; ++k)
        for (int j = 0; j < func_h.dim[1]; ++j)
          for (int i = 0; i < func_h.dim[0]; ++i) {
            size_t idx = func_h.index(i, j, k);
            Eigen::Vector3d p;
            if (has_motion) {
              Eigen::Vector3d x =
                  func_h.voxelToWorld(Eigen::Vector3d(i, j, k));
              p = truth.warp.inverse(truth.motion[f].apply(x));
            } else {
              p = cached[idx];
            }
            double val = anatomy.epi(p) * truth.intensity_scale;
            for (size_t r = 0; r < regions.size(); ++r)
              if ((p - region_centers[r]).norm() <= regions[r].radius_mm)
                val += truth.amplitudes[r] * X(f, regions[r].condition);
            if (config.noise_sigma > 0) val += noise(rng);
            frame.data[idx] = static_cast<float>(val);
          }
    }

    SubjectRecord rec;
    rec.subject_id = strCat("sub-", s < 10 ? "00" : (s < 100 ? "0" : ""), s);
    rec.smri = smri;
    rec.fmri = fmri;
    std::uniform_real_distribution<double> uage(20.0, 70.0);
    rec.age_years = uage(rng);
    rec.gender = (rng() & 1) ? Gender::male : Gender::female;
    truth.outcome_noise = njit(rng) * config.outcome_noise_sd;
    double outcome = truth.outcome_noise;
    for (size_t r = 0; r < regions.size(); ++r)
      outcome += config.outcome_weights[r] * truth.amplitudes[r];
    rec.outcome_hamd_change = std::clamp(outcome, -52.0, 52.0);
    rec.covariates["age_years"] = rec.age_years;
    rec.covariates["gender_male"] = rec.gender == Gender::male ? 1.0 : 0.0;
    rec.covariates["scale_a"] = njit(rng);
    rec.covariates["scale_b"] = njit(rng);

    out.truth.subjects[s] = std::move(truth);
    out.subjects[s] = std::move(rec);
  });

  requireUniqueIds(out.subjects);
  return out;
}

/// Template landmark mapped through a subject's generating warp; returned in
/// world mm together with the anatomy-grid voxel coordinate.
struct LandmarkPosition {
  Eigen::Vector3d world;
  Eigen::Vector3d voxel;  // continuous anatomy-grid coordinate
};

inline LandmarkPosition landmarkPosition(const GroundTruth& truth,
                                         size_t subject_index,
                                         const std::string& landmark) {
  if (subject_index >= truth.subjects.size())
    throw Error(ErrorKind::lookup, "unknown subject index");
  auto it = truth.landmarks.find(landmark);
  if (it == truth.landmarks.end())
    throw Error(ErrorKind::lookup, "unknown landmark: " + landmark);
  LandmarkPosition out;
  out.world = truth.subjects[subject_index].warp.forward(it->second);
  VolumeHeader anat_h =
      makeHeader(truth.config.anat_dim, truth.config.anat_voxel);
  out.voxel = anat_h.worldToVoxel(out.world);
  return out;
}

/// Exact brain mask of a subject on an arbitrary grid.
inline BinaryMask analyticBrainMask(const GroundTruth& truth,
                                    size_t subject_index,
                                    const VolumeHeader& grid) {
  const auto& warp = truth.subjects.at(subject_index).warp;
  BinaryMask m(grid);
  for (int k = 0; k < grid.dim[2]; ++k)
    for (int j = 0; j < grid.dim[1]; ++j)
      for (int i = 0; i < grid.dim[0]; ++i) {
        Eigen::Vector3d p =
            warp.inverse(grid.voxelToWorld(Eigen::Vector3d(i, j, k)));
        double rho =
            (p - truth.brain_center).cwiseQuotient(truth.brain_radii).norm();
        m.at(i, j, k) = rho <= 1.0;
      }
  return m;
}

}  // namespace warpaug

#endif  // WARPAUG_PHANTOM_HPP
