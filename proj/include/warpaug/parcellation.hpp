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

/// @file parcellation.hpp
/// @brief Spectral-clustering parcellation of the brain mask from temporal
///        correlations (normalized-cut embedding + k-means + connectivity
///        enforcement) and ROI-mean feature extraction.

#ifndef WARPAUG_PARCELLATION_HPP
#define WARPAUG_PARCELLATION_HPP

#include <deque>
#include <numeric>
#include <set>

#include "warpaug/glm.hpp"
#include "warpaug/subjects.hpp"

namespace warpaug {

struct Parcellation {
  VolumeHeader header;
  std::vector<int32_t> labels;  // 0 background, 1..K ROIs
  int requested_k = 0;
  int achieved_k = 0;
  double correlation_threshold = 0.5;
  uint64_t seed = 0;
  std::vector<std::string> subject_ids;  // provenance

  size_t roiSize(int label) const {
    size_t n = 0;
    for (int32_t l : labels) n += (l == label);
    return n;
  }
};

namespace detail {

/// Sparse 6-neighbor affinity stored as three forward-edge weight grids.
struct AffinityGraph {
  VolumeHeader header;
  std::array<std::vector<double>, 3> w;  // edge idx -> idx+stride[axis]
  std::array<size_t, 3> stride;
  std::vector<uint8_t> in_mask;

  explicit AffinityGraph(const BinaryMask& mask) : header(mask.header) {
    stride = {1, static_cast<size_t>(header.dim[0]),
              static_cast<size_t>(header.dim[0]) * header.dim[1]};
    in_mask = mask.data;
    for (auto& comp : w) comp.assign(header.nvox(), 0.0);
  }

  bool edgeExists(size_t idx, int axis) const {
    int coord[3] = {static_cast<int>(idx % header.dim[0]),
                    static_cast<int>((idx / header.dim[0]) % header.dim[1]),
                    static_cast<int>(idx / (static_cast<size_t>(header.dim[0]) *
                                            header.dim[1]))};
    if (coord[axis] + 1 >= header.dim[axis]) return false;
    return in_mask[idx] && in_mask[idx + stride[axis]];
  }
};

/// Group affinity: per subject, 6-neighbor Pearson correlations with weights
/// below the threshold zeroed, then averaged across subjects.
inline AffinityGraph buildAffinity(const std::vector<const Volume4D*>& runs,
                                   const BinaryMask& mask, double threshold) {
  AffinityGraph graph(mask);
  const size_t nvox = mask.header.nvox();
  for (const Volume4D* run : runs) {
    if (!run->frames[0].header.sameGrid(mask.header))
      throw Error(ErrorKind::shape, "parcellation run grid differs from mask");
    const int T = static_cast<int>(run->frames.size());
    // standardized series per in-mask voxel
    std::vector<float> z(nvox * T, 0.0f);
    std::vector<uint8_t> valid(nvox, 0);
    for (size_t v = 0; v < nvox; ++v) {
      if (!mask.data[v]) continue;
      double sum = 0, sum2 = 0;
      for (int t = 0; t < T; ++t) sum += run->frames[t].data[v];
      double mean = sum / T;
      for (int t = 0; t < T; ++t) {
        double d = run->frames[t].data[v] - mean;
        sum2 += d * d;
      }
      double sd = std::sqrt(sum2 / T);
      if (sd < 1e-12) continue;  // flat series carries no affinity
      valid[v] = 1;
      for (int t = 0; t < T; ++t)
        z[v * T + t] =
            static_cast<float>((run->frames[t].data[v] - mean) / sd);
    }
    for (int axis = 0; axis < 3; ++axis)
      for (size_t v = 0; v < nvox; ++v) {
        if (!graph.edgeExists(v, axis)) continue;
        size_t u = v + graph.stride[axis];
        if (!valid[v] || !valid[u]) continue;
        double corr = 0;
        for (int t = 0; t < T; ++t)
          corr += static_cast<double>(z[v * T + t]) * z[u * T + t];
        corr /= T;
        if (corr >= threshold) graph.w[axis][v] += corr;
      }
  }
  const double inv = 1.0 / static_cast<double>(runs.size());
  for (auto& comp : graph.w)
    for (double& x : comp) x *= inv;
  return graph;
}

/// Orthogonal subspace iteration for the top-m eigenvectors of the
/// symmetrically normalized affinity, shifted to keep the order of signed
/// eigenvalues. Deterministic for a fixed seed.
inline Eigen::MatrixXd spectralEmbedding(const AffinityGraph& graph,
                                         const std::vector<size_t>& nodes,
                                         int m, uint64_t seed) {
  const size_t n = nodes.size();
  std::vector<int32_t> node_of(graph.header.nvox(), -1);
  for (size_t i = 0; i < n; ++i) node_of[nodes[i]] = static_cast<int32_t>(i);

  // adjacency in node indices
  std::vector<std::vector<std::pair<int32_t, double>>> adj(n);
  for (int axis = 0; axis < 3; ++axis)
    for (size_t v = 0; v < graph.header.nvox(); ++v) {
      double wv = graph.w[axis][v];
      if (wv <= 0) continue;
      int32_t a = node_of[v], b = node_of[v + graph.stride[axis]];
      if (a < 0 || b < 0) continue;
      adj[a].push_back({b, wv});
      adj[b].push_back({a, wv});
    }
  Eigen::VectorXd degree(n);
  for (size_t i = 0; i < n; ++i) {
    double d = 0;
    for (auto [j, wv] : adj[i]) d += wv;
    degree[i] = std::max(d, 1e-10);
  }
  Eigen::VectorXd dinv_sqrt = degree.array().rsqrt();

  // S x = D^-1/2 W D^-1/2 x ; iterate on (S + I)/2, spectrum in [0, 1]
  auto applyS = [&](const Eigen::MatrixXd& x) {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(x.rows(), x.cols());
    for (size_t i = 0; i < n; ++i) {
      for (auto [j, wv] : adj[i])
        y.row(i) += wv * dinv_sqrt[i] * dinv_sqrt[j] * x.row(j);
    }
    return ((y + x) * 0.5).eval();
  };

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(n, m);
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, c) = normal(rng);
  auto orthonormalize = [&](Eigen::MatrixXd& q) {
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
      for (Eigen::Index p = 0; p < c; ++p)
        q.col(c) -= q.col(p).dot(q.col(c)) * q.col(p);
      double nrm = q.col(c).norm();
      if (nrm < 1e-12)
        q.col(c).setConstant(1.0 / std::sqrt(static_cast<double>(n)));
      else
        q.col(c) /= nrm;
    }
  };
  orthonormalize(x);
  for (int iter = 0; iter < 200; ++iter) {
    x = applyS(x);
    orthonormalize(x);
  }
  // Rayleigh-Ritz rotation orders the converged basis by eigenvalue
  Eigen::MatrixXd sx = applyS(x);
  Eigen::MatrixXd small = x.transpose() * sx;
  small = 0.5 * (small + small.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(small);
  Eigen::MatrixXd rotated = x * es.eigenvectors();
  // descending eigenvalue order
  Eigen::MatrixXd ordered(n, m);
  for (int c = 0; c < m; ++c) ordered.col(c) = rotated.col(m - 1 - c);
  // map back through D^-1/2 (random-walk eigenvectors), then row-normalize
  for (size_t i = 0; i < n; ++i) ordered.row(i) *= dinv_sqrt[i];
  for (size_t i = 0; i < n; ++i) {
    double nrm = ordered.row(i).norm();
    if (nrm > 1e-12) ordered.row(i) /= nrm;
  }
  return ordered;
}

/// Seeded k-means++ followed by Lloyd iterations; ties and reseeding are
/// deterministic.
inline std::vector<int> kmeans(const Eigen::MatrixXd& rows, int k,
                               uint64_t seed) {
  const Eigen::Index n = rows.rows();
  Rng rng(seed);
  std::vector<Eigen::VectorXd> centers;
  {
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centers.push_back(rows.row(pick(rng)));
    Eigen::VectorXd d2 =
        (rows.rowwise() - centers[0].transpose()).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < k) {
      double total = d2.sum();
      if (total <= 1e-18) {
        centers.push_back(rows.row(pick(rng)));
      } else {
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng), acc = 0;
        Eigen::Index chosen = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
          acc += d2[i];
          if (acc >= target) {
            chosen = i;
            break;
          }
        }
        centers.push_back(rows.row(chosen));
      }
      for (Eigen::Index i = 0; i < n; ++i)
        d2[i] = std::min(d2[i],
                         (rows.row(i).transpose() - centers.back()).squaredNorm());
    }
  }
  std::vector<int> assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (rows.row(i).transpose() - centers[0]).squaredNorm();
      for (int c = 1; c < k; ++c) {
        double d = (rows.row(i).transpose() - centers[c]).squaredNorm();
        if (d < best_d - 1e-15) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    std::vector<Eigen::VectorXd> sums(k, Eigen::VectorXd::Zero(rows.cols()));
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums[assign[i]] += rows.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) centers[c] = sums[c] / counts[c];
    if (!changed) break;
  }
  return assign;
}

}  // namespace detail

/// Normalized-cut clustering of the averaged masked affinity, followed by
/// connectivity enforcement: disconnected label groups split into components
/// and the smallest fragments merge into their most-affine neighbors until
/// the requested count is reached (or fewer, when k-means leaves clusters
/// empty). The achieved count is reported on the result.
inline Parcellation buildParcellation(const std::vector<const Volume4D*>& runs,
                                      const BinaryMask& mask, int k,
                                      uint64_t seed,
                                      double correlation_threshold = 0.5) {
  if (runs.empty())
    throw Error(ErrorKind::parameter, "parcellation needs at least one run");
  if (k < 1) throw Error(ErrorKind::parameter, "k must be >= 1");
  std::vector<size_t> nodes;
  for (size_t v = 0; v < mask.data.size(); ++v)
    if (mask.data[v]) nodes.push_back(v);
  if (nodes.empty()) throw Error(ErrorKind::parameter, "empty mask");
  if (static_cast<size_t>(k) > nodes.size())
    throw Error(ErrorKind::parameter, "k exceeds in-mask voxel count");

  Parcellation out;
  out.header = mask.header;
  out.labels.assign(mask.data.size(), 0);
  out.requested_k = k;
  out.correlation_threshold = correlation_threshold;
  out.seed = seed;

  detail::AffinityGraph graph =
      detail::buildAffinity(runs, mask, correlation_threshold);

  std::vector<int> assign;
  if (k == 1) {
    assign.assign(nodes.size(), 0);
  } else {
    Eigen::MatrixXd embedding =
        detail::spectralEmbedding(graph, nodes, k, deriveSeed(seed, "eigs"));
    assign = detail::kmeans(embedding, k, deriveSeed(seed, "kmeans"));
  }
  for (size_t i = 0; i < nodes.size(); ++i)
    out.labels[nodes[i]] = assign[i] + 1;

  // --- connectivity enforcement ------------------------------------------
  const VolumeHeader& h = mask.header;
  auto relabelComponents = [&]() {
    // splits every label into 6-connected components; returns component ids
    std::vector<int32_t> comp(out.labels.size(), 0);
    int32_t next = 0;
    std::deque<size_t> queue;
    for (size_t v = 0; v < out.labels.size(); ++v) {
      if (!out.labels[v] || comp[v]) continue;
      ++next;
      comp[v] = next;
      queue.push_back(v);
      while (!queue.empty()) {
        size_t cur = queue.front();
        queue.pop_front();
        int ci = static_cast<int>(cur % h.dim[0]);
        int cj = static_cast<int>((cur / h.dim[0]) % h.dim[1]);
        int ck = static_cast<int>(cur / (static_cast<size_t>(h.dim[0]) * h.dim[1]));
        const int off[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                               {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
        for (const auto& o : off) {
          int ni = ci + o[0], nj = cj + o[1], nk = ck + o[2];
          if (!h.inBounds(ni, nj, nk)) continue;
          size_t nv = h.index(ni, nj, nk);
          if (out.labels[nv] == out.labels[cur] && !comp[nv]) {
            comp[nv] = next;
            queue.push_back(nv);
          }
        }
      }
    }
    return std::pair<std::vector<int32_t>, int32_t>(std::move(comp), next);
  };

  auto [comp, n_comp] = relabelComponents();
  for (size_t v = 0; v < out.labels.size(); ++v) out.labels[v] = comp[v];

  while (n_comp > k) {
    // component sizes and inter-component affinities
    std::vector<size_t> size(n_comp + 1, 0);
    for (int32_t l : out.labels)
      if (l) ++size[l];
    int32_t smallest = 0;
    for (int32_t l = 1; l <= n_comp; ++l)
      if (size[l] && (!smallest || size[l] < size[smallest])) smallest = l;
    std::map<int32_t, double> affinity;
    std::map<int32_t, size_t> faces;
    for (int axis = 0; axis < 3; ++axis)
      for (size_t v = 0; v < out.labels.size(); ++v) {
        if (!graph.edgeExists(v, axis)) continue;
        size_t u = v + graph.stride[axis];
        int32_t lv = out.labels[v], lu = out.labels[u];
        if (lv == lu) continue;
        if (lv == smallest && lu) {
          affinity[lu] += graph.w[axis][v];
          ++faces[lu];
        } else if (lu == smallest && lv) {
          affinity[lv] += graph.w[axis][v];
          ++faces[lv];
        }
      }
    int32_t merge_into = 0;
    double best_aff = -1;
    for (auto [l, a] : affinity)
      if (a > best_aff) {
        best_aff = a;
        merge_into = l;
      }
    if (merge_into == 0) {
      // no affinity edges: fall back to the most shared faces
      size_t best_faces = 0;
      for (auto [l, f] : faces)
        if (f > best_faces) {
          best_faces = f;
          merge_into = l;
        }
    }
    if (merge_into == 0) break;  // isolated island, cannot merge further
    for (auto& l : out.labels)
      if (l == smallest) l = merge_into;
    auto rec = relabelComponents();
    for (size_t v = 0; v < out.labels.size(); ++v) out.labels[v] = rec.first[v];
    if (rec.second >= n_comp) break;  // merge failed to reduce the count
    n_comp = rec.second;
  }

  // compact labels to 1..K' ordered by first occurrence
  std::map<int32_t, int32_t> remap;
  for (int32_t& l : out.labels) {
    if (!l) continue;
    auto it = remap.find(l);
    if (it == remap.end())
      it = remap.emplace(l, static_cast<int32_t>(remap.size() + 1)).first;
    l = it->second;
  }
  out.achieved_k = static_cast<int>(remap.size());
  return out;
}

struct FeatureVector {
  std::vector<double> roi_means;  // map-major: all ROIs of map 0, then 1, 2
  Covariates covariates;
  double outcome = 0.0;
  int achieved_k = 0;

  /// Model input: ROI means then covariates in name order.
  std::vector<double> input() const {
    std::vector<double> x = roi_means;
    for (const auto& [name, v] : covariates) x.push_back(v);
    return x;
  }

  void validate() const {
    for (double v : roi_means)
      if (!std::isfinite(v))
        throw Error(ErrorKind::invariant, "non-finite feature");
  }
};

/// ROI means of the three contrast maps plus subject covariates and outcome.
inline FeatureVector extractFeatures(const std::vector<ContrastMap>& contrasts,
                                     const Parcellation& parc,
                                     const Covariates& covariates,
                                     double outcome) {
  FeatureVector out;
  out.achieved_k = parc.achieved_k;
  out.covariates = covariates;
  out.outcome = outcome;
  for (const auto& c : contrasts) {
    if (!c.map.header.sameGrid(parc.header))
      throw Error(ErrorKind::shape, "contrast grid differs from parcellation");
    std::vector<double> sum(parc.achieved_k + 1, 0.0);
    std::vector<size_t> cnt(parc.achieved_k + 1, 0);
    for (size_t v = 0; v < c.map.data.size(); ++v) {
      int32_t l = parc.labels[v];
      if (!l) continue;
      sum[l] += c.map.data[v];
      ++cnt[l];
    }
    for (int l = 1; l <= parc.achieved_k; ++l) {
      if (cnt[l] == 0)
        throw Error(ErrorKind::invariant,
                    strCat("empty ROI ", l, " during feature extraction"));
      out.roi_means.push_back(sum[l] / static_cast<double>(cnt[l]));
    }
  }
  out.validate();
  return out;
}

}  // namespace warpaug

#endif  // WARPAUG_PARCELLATION_HPP
