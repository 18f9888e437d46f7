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

/// @file glm.hpp
/// @brief Subject-level GLM: canonical double-gamma HRF, block-design matrix
///        construction, and voxelwise ordinary least squares producing one
///        contrast map per task condition.

#ifndef WARPAUG_GLM_HPP
#define WARPAUG_GLM_HPP

#include <string>
#include <vector>

#include "warpaug/volume.hpp"

namespace warpaug {

/// Canonical double-gamma hemodynamic response: gamma pdf (shape 6, scale 1)
/// minus 1/6 of a gamma pdf (shape 16, scale 1); zero for t < 0. Peaks near
/// t = 5 s with a late undershoot.
inline double canonicalHrf(double t_seconds) {
  if (t_seconds <= 0.0) return 0.0;
  auto gamma_pdf = [](double t, double shape) {
    return std::exp((shape - 1.0) * std::log(t) - t - std::lgamma(shape));
  };
  return gamma_pdf(t_seconds, 6.0) - gamma_pdf(t_seconds, 16.0) / 6.0;
}

struct ConditionSpec {
  std::string name;
  std::vector<std::pair<double, double>> blocks;  // (onset_s, duration_s)
};

struct TaskDesign {
  std::vector<ConditionSpec> conditions;
  double tr_s = 2.0;
  int n_frames = 0;

  void validate() const {
    if (conditions.empty())
      throw Error(ErrorKind::design, "task design has no conditions");
    if (!(tr_s > 0) || n_frames < 2)
      throw Error(ErrorKind::design, "invalid TR or frame count");
    double run_length = n_frames * tr_s;
    for (const auto& c : conditions)
      for (auto [onset, dur] : c.blocks) {
        if (onset < 0 || dur <= 0 || onset + dur > run_length + 1e-9)
          throw Error(ErrorKind::design,
                      "block outside the run: condition " + c.name);
      }
  }
};

struct DesignMatrix {
  std::vector<std::string> names;  // conditions..., "drift", "intercept"
  Eigen::MatrixXd X;               // n_frames x n_columns
  int n_conditions = 0;
};

/// Boxcar at 0.1 s resolution convolved with the canonical HRF, sampled at
/// frame times f*TR; condition and drift columns are mean-centered so the
/// intercept is orthogonal to them.
inline DesignMatrix buildDesign(const TaskDesign& design) {
  design.validate();
  const double dt = 0.1;
  const int n_cond = static_cast<int>(design.conditions.size());
  const int n_frames = design.n_frames;
  const int n_fine = static_cast<int>(std::ceil(n_frames * design.tr_s / dt));
  // HRF kernel over its 32 s support
  const int n_hrf = static_cast<int>(32.0 / dt);
  std::vector<double> hrf(n_hrf);
  for (int i = 0; i < n_hrf; ++i) hrf[i] = canonicalHrf(i * dt);

  DesignMatrix out;
  out.n_conditions = n_cond;
  out.X.resize(n_frames, n_cond + 2);
  for (int c = 0; c < n_cond; ++c) {
    const auto& cond = design.conditions[c];
    out.names.push_back(cond.name);
    std::vector<double> box(n_fine, 0.0);
    for (auto [onset, dur] : cond.blocks) {
      int lo = static_cast<int>(std::round(onset / dt));
      int hi = static_cast<int>(std::round((onset + dur) / dt));
      for (int i = lo; i < std::min(hi, n_fine); ++i) box[i] = 1.0;
    }
    // causal convolution sampled at frame times
    for (int f = 0; f < n_frames; ++f) {
      int t_idx = static_cast<int>(std::round(f * design.tr_s / dt));
      double acc = 0.0;
      int jmax = std::min(t_idx + 1, n_hrf);
      for (int j = 0; j < jmax; ++j) acc += hrf[j] * box[t_idx - j];
      out.X(f, c) = acc * dt;
    }
    double mean = out.X.col(c).mean();
    out.X.col(c).array() -= mean;
    if (out.X.col(c).norm() < 1e-10)
      throw Error(ErrorKind::design,
                  "condition regressor is constant: " + cond.name);
  }
  // mean-centered linear drift, then intercept
  out.names.push_back("drift");
  out.names.push_back("intercept");
  for (int f = 0; f < n_frames; ++f) {
    out.X(f, n_cond) = static_cast<double>(f) / (n_frames - 1) - 0.5;
    out.X(f, n_cond + 1) = 1.0;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(out.X);
  qr.setThreshold(1e-8);
  if (qr.rank() < out.X.cols())
    throw Error(ErrorKind::design, "design matrix is rank deficient");
  return out;
}

struct ContrastMap {
  std::string condition;
  Volume3D map;
};

struct GlmResult {
  std::vector<ContrastMap> contrasts;  // one per condition, design order
  size_t n_bad_voxels = 0;             // non-finite series zeroed out
};

/// Voxelwise OLS; returns the condition-coefficient volumes (drift and
/// intercept are estimated but not returned).
inline GlmResult fitGlm(const Volume4D& fmri, const DesignMatrix& design) {
  const int n_frames = static_cast<int>(fmri.frames.size());
  if (n_frames != design.X.rows())
    throw Error(ErrorKind::shape, "frame count does not match design matrix");
  const int n_cols = static_cast<int>(design.X.cols());
  // pseudo-inverse via normal equations; the design is small and well ranked
  Eigen::MatrixXd gram = design.X.transpose() * design.X;
  Eigen::MatrixXd pinv = gram.ldlt().solve(design.X.transpose());

  GlmResult out;
  const VolumeHeader spatial = fmri.frames[0].header;
  for (int c = 0; c < design.n_conditions; ++c)
    out.contrasts.push_back({design.names[c], Volume3D(spatial)});

  const size_t nvox = spatial.nvox();
  Eigen::VectorXd y(n_frames);
  for (size_t v = 0; v < nvox; ++v) {
    bool finite = true;
    for (int f = 0; f < n_frames; ++f) {
      float val = fmri.frames[f].data[v];
      if (!std::isfinite(val)) {
        finite = false;
        break;
      }
      y[f] = val;
    }
    if (!finite) {
      ++out.n_bad_voxels;
      continue;  // betas stay 0
    }
    Eigen::VectorXd beta = pinv * y;
    for (int c = 0; c < design.n_conditions; ++c)
      out.contrasts[c].map.data[v] = static_cast<float>(beta[c]);
    (void)n_cols;
  }
  return out;
}

}  // namespace warpaug

#endif  // WARPAUG_GLM_HPP
