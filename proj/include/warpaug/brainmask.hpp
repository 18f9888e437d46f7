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

/// @file brainmask.hpp
/// @brief Automatic brain extraction: Otsu threshold, largest component,
///        morphological closing, hole filling. One parameterized algorithm
///        covers both structural and mean-functional volumes.

#ifndef WARPAUG_BRAINMASK_HPP
#define WARPAUG_BRAINMASK_HPP

#include <algorithm>
#include <deque>
#include <vector>

#include "warpaug/volume.hpp"

namespace warpaug {

struct MaskParams {
  double closing_radius_mm = 4.0;       // 6.0 is the default for EPI means
  double min_component_fraction = 0.1;  // reserved sanity bound

  void validate() const {
    if (!(closing_radius_mm > 0))
      throw Error(ErrorKind::parameter, "closing radius must be positive");
    if (!(min_component_fraction > 0 && min_component_fraction <= 1))
      throw Error(ErrorKind::parameter, "component fraction must be in (0,1]");
  }
};

inline MaskParams smriMaskParams() { return MaskParams{4.0, 0.1}; }
inline MaskParams fmriMaskParams() { return MaskParams{6.0, 0.1}; }

namespace detail {

/// Otsu on a 256-bin histogram over [min,max]; ties resolved toward the
/// lower threshold. Classification happens at the bin level so the result is
/// invariant to affine intensity rescaling up to bin quantization.
inline std::vector<uint8_t> otsuForeground(const std::vector<float>& data) {
  float lo = data[0], hi = data[0];
  for (float v : data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo))
    throw Error(ErrorKind::extraction,
                "constant-intensity volume has no threshold");
  constexpr int kBins = 256;
  const double scale = kBins / (static_cast<double>(hi) - lo);
  std::vector<int> bin(data.size());
  std::vector<double> hist(kBins, 0.0);
  for (size_t i = 0; i < data.size(); ++i) {
    int b = std::clamp(static_cast<int>((data[i] - lo) * scale), 0, kBins - 1);
    bin[i] = b;
    hist[b] += 1.0;
  }
  const double total = static_cast<double>(data.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_t = 0;
  for (int t = 0; t < kBins - 1; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    double w1 = total - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
    double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best) {  // strict: ties keep the lower threshold
      best = between;
      best_t = t;
    }
  }
  std::vector<uint8_t> fg(data.size());
  for (size_t i = 0; i < data.size(); ++i) fg[i] = bin[i] > best_t;
  return fg;
}

inline const std::array<std::array<int, 3>, 6>& sixNeighbors() {
  static const std::array<std::array<int, 3>, 6> n = {{{1, 0, 0},
                                                       {-1, 0, 0},
                                                       {0, 1, 0},
                                                       {0, -1, 0},
                                                       {0, 0, 1},
                                                       {0, 0, -1}}};
  return n;
}

/// Connected-component labeling; conn = 6 or 26. Labels start at 1,
/// 0 = not in foreground. Returns label volume and component sizes.
inline std::vector<int32_t> labelComponents(const VolumeHeader& h,
                                            const std::vector<uint8_t>& fg,
                                            int conn,
                                            std::vector<size_t>* sizes) {
  std::vector<int32_t> label(fg.size(), 0);
  if (sizes) sizes->clear();
  std::vector<std::array<int, 3>> offsets;
  if (conn == 6) {
    for (auto& o : sixNeighbors()) offsets.push_back(o);
  } else {
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (dx || dy || dz) offsets.push_back({dx, dy, dz});
  }
  int32_t next = 0;
  std::deque<size_t> queue;
  for (int k = 0; k < h.dim[2]; ++k)
    for (int j = 0; j < h.dim[1]; ++j)
      for (int i = 0; i < h.dim[0]; ++i) {
        size_t idx = h.index(i, j, k);
        if (!fg[idx] || label[idx]) continue;
        ++next;
        size_t count = 0;
        label[idx] = next;
        queue.push_back(idx);
        while (!queue.empty()) {
          size_t cur = queue.front();
          queue.pop_front();
          ++count;
          int ci = static_cast<int>(cur % h.dim[0]);
          int cj = static_cast<int>((cur / h.dim[0]) % h.dim[1]);
          int ck = static_cast<int>(cur / (static_cast<size_t>(h.dim[0]) * h.dim[1]));
          for (const auto& o : offsets) {
            int ni = ci + o[0], nj = cj + o[1], nk = ck + o[2];
            if (!h.inBounds(ni, nj, nk)) continue;
            size_t nidx = h.index(ni, nj, nk);
            if (fg[nidx] && !label[nidx]) {
              label[nidx] = next;
              queue.push_back(nidx);
            }
          }
        }
        if (sizes) sizes->push_back(count);
      }
  return label;
}

/// Ellipsoidal structuring element: voxel offsets within radius_mm.
inline std::vector<std::array<int, 3>> ballOffsets(const VolumeHeader& h,
                                                   double radius_mm) {
  std::vector<std::array<int, 3>> out;
  std::array<int, 3> r;
  for (int d = 0; d < 3; ++d)
    r[d] = std::max(1, static_cast<int>(std::floor(radius_mm / h.voxel_size[d])));
  for (int dz = -r[2]; dz <= r[2]; ++dz)
    for (int dy = -r[1]; dy <= r[1]; ++dy)
      for (int dx = -r[0]; dx <= r[0]; ++dx) {
        double q = 0;
        q += std::pow(dx * h.voxel_size[0] / radius_mm, 2);
        q += std::pow(dy * h.voxel_size[1] / radius_mm, 2);
        q += std::pow(dz * h.voxel_size[2] / radius_mm, 2);
        if (q <= 1.0 + 1e-12) out.push_back({dx, dy, dz});
      }
  return out;
}

inline std::vector<uint8_t> morph(const VolumeHeader& h,
                                  const std::vector<uint8_t>& in,
                                  const std::vector<std::array<int, 3>>& se,
                                  bool dilate) {
  std::vector<uint8_t> out(in.size(), dilate ? 0 : 1);
  for (int k = 0; k < h.dim[2]; ++k)
    for (int j = 0; j < h.dim[1]; ++j)
      for (int i = 0; i < h.dim[0]; ++i) {
        size_t idx = h.index(i, j, k);
        uint8_t v = dilate ? 0 : 1;
        for (const auto& o : se) {
          int ni = i + o[0], nj = j + o[1], nk = k + o[2];
          // outside the grid counts as background
          uint8_t nv = h.inBounds(ni, nj, nk) ? in[h.index(ni, nj, nk)] : 0;
          if (dilate && nv) {
            v = 1;
            break;
          }
          if (!dilate && !nv) {
            v = 0;
            break;
          }
        }
        out[idx] = v;
      }
  return out;
}

/// Fills cavities: background is flood-filled from the volume border with
/// 26-connectivity; unreachable zeros become foreground.
inline void fillHoles(const VolumeHeader& h, std::vector<uint8_t>& mask) {
  std::vector<uint8_t> bg(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) bg[i] = !mask[i];
  std::vector<int32_t> lab = labelComponents(h, bg, 26, nullptr);
  // collect labels touching the border
  std::vector<uint8_t> open(1, 0);
  auto mark = [&](int i, int j, int k) {
    int32_t l = lab[h.index(i, j, k)];
    if (l > 0) {
      if (static_cast<size_t>(l) >= open.size()) open.resize(l + 1, 0);
      open[l] = 1;
    }
  };
  for (int j = 0; j < h.dim[1]; ++j)
    for (int i = 0; i < h.dim[0]; ++i) {
      mark(i, j, 0);
      mark(i, j, h.dim[2] - 1);
    }
  for (int k = 0; k < h.dim[2]; ++k) {
    for (int i = 0; i < h.dim[0]; ++i) {
      mark(i, 0, k);
      mark(i, h.dim[1] - 1, k);
    }
    for (int j = 0; j < h.dim[1]; ++j) {
      mark(0, j, k);
      mark(h.dim[0] - 1, j, k);
    }
  }
  for (size_t i = 0; i < mask.size(); ++i) {
    int32_t l = lab[i];
    if (l > 0 && (static_cast<size_t>(l) >= open.size() || !open[l]))
      mask[i] = 1;  // enclosed cavity
  }
}

}  // namespace detail

/// Otsu threshold -> largest 6-connected component -> closing -> hole fill.
inline BinaryMask extractBrain(const Volume3D& vol,
                               const MaskParams& params = smriMaskParams()) {
  params.validate();
  std::vector<uint8_t> fg = detail::otsuForeground(vol.data);

  std::vector<size_t> sizes;
  auto lab = detail::labelComponents(vol.header, fg, 6, &sizes);
  if (sizes.empty())
    throw Error(ErrorKind::extraction, "no foreground after thresholding");
  int32_t largest =
      1 + static_cast<int32_t>(std::max_element(sizes.begin(), sizes.end()) -
                               sizes.begin());
  for (size_t i = 0; i < fg.size(); ++i) fg[i] = (lab[i] == largest);

  auto se = detail::ballOffsets(vol.header, params.closing_radius_mm);
  fg = detail::morph(vol.header, fg, se, true);
  fg = detail::morph(vol.header, fg, se, false);
  detail::fillHoles(vol.header, fg);

  BinaryMask mask;
  mask.header = vol.header;
  mask.data = std::move(fg);
  if (mask.count() == 0)
    throw Error(ErrorKind::extraction, "empty mask after morphology");
  return mask;
}

inline Volume3D applyMask(const Volume3D& vol, const BinaryMask& mask) {
  if (!vol.header.sameGrid(mask.header))
    throw Error(ErrorKind::shape, "mask grid differs from volume grid");
  Volume3D out = vol;
  for (size_t i = 0; i < out.data.size(); ++i)
    if (!mask.data[i]) out.data[i] = 0.0f;
  return out;
}

inline Volume4D applyMask(const Volume4D& vol, const BinaryMask& mask) {
  Volume4D out = vol;
  for (auto& f : out.frames) f = applyMask(f, mask);
  return out;
}

/// Dice overlap 2|A^B| / (|A|+|B|).
inline double diceCoefficient(const BinaryMask& a, const BinaryMask& b) {
  if (!a.header.sameGrid(b.header))
    throw Error(ErrorKind::shape, "dice of masks on different grids");
  size_t na = 0, nb = 0, ni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    na += a.data[i] != 0;
    nb += b.data[i] != 0;
    ni += (a.data[i] != 0) && (b.data[i] != 0);
  }
  if (na + nb == 0)
    throw Error(ErrorKind::undefined_metric, "dice of two empty masks");
  return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

}  // namespace warpaug

#endif  // WARPAUG_BRAINMASK_HPP
