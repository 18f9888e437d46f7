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

#include <gtest/gtest.h>

#include <random>

#include "warpaug/parcellation.hpp"

using namespace warpaug;

namespace {

// two spatially separated blocks with correlated series inside each block
struct TwoBlockCase {
  BinaryMask mask;
  Volume4D run;
  std::vector<uint8_t> block;  // 0/1 membership per voxel
};

TwoBlockCase twoBlocks(uint64_t seed) {
  VolumeHeader h = makeHeader({12, 5, 5}, {3, 3, 3});
  TwoBlockCase out{BinaryMask(h), Volume4D(h, 40, 2.0), {}};
  out.block.assign(h.nvox(), 0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.15);
  std::vector<double> sig_a(40), sig_b(40);
  std::normal_distribution<double> sig(0.0, 1.0);
  for (int t = 0; t < 40; ++t) {
    sig_a[t] = sig(rng);
    sig_b[t] = sig(rng);
  }
  for (int k = 0; k < 5; ++k)
    for (int j = 0; j < 5; ++j)
      for (int i = 0; i < 12; ++i) {
        size_t idx = h.index(i, j, k);
        if (i <= 4) {
          out.mask.data[idx] = 1;
          out.block[idx] = 0;
        } else if (i >= 7) {
          out.mask.data[idx] = 1;
          out.block[idx] = 1;
        } else {
          continue;  // the gap keeps the blocks spatially separated
        }
        for (int t = 0; t < 40; ++t)
          out.run.frames[t].data[idx] = static_cast<float>(
              (out.block[idx] ? sig_b[t] : sig_a[t]) + noise(rng));
      }
  return out;
}

Volume4D smoothPhaseRun(const VolumeHeader& h, int frames, uint64_t seed) {
  // slowly varying phase field: neighboring voxels strongly correlated
  Volume4D run(h, frames, 2.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (int k = 0; k < h.dim[2]; ++k)
    for (int j = 0; j < h.dim[1]; ++j)
      for (int i = 0; i < h.dim[0]; ++i) {
        double phase = 0.25 * i + 0.17 * j + 0.31 * k;
        size_t idx = h.index(i, j, k);
        for (int t = 0; t < frames; ++t)
          run.frames[t].data[idx] =
              static_cast<float>(std::sin(0.5 * t + phase) + noise(rng));
      }
  return run;
}

}  // namespace

TEST(Parcellation, TwoBlockExactRecovery) {
  TwoBlockCase tc = twoBlocks(3);
  std::vector<const Volume4D*> runs{&tc.run};
  Parcellation parc = buildParcellation(runs, tc.mask, 2, 7);
  EXPECT_EQ(parc.achieved_k, 2);
  // labels must match block membership exactly (up to label swap)
  int32_t label_of_block0 = 0, label_of_block1 = 0;
  for (size_t v = 0; v < tc.mask.data.size(); ++v) {
    if (!tc.mask.data[v]) {
      EXPECT_EQ(parc.labels[v], 0);
      continue;
    }
    int32_t& expected = tc.block[v] ? label_of_block1 : label_of_block0;
    if (expected == 0) expected = parc.labels[v];
    EXPECT_EQ(parc.labels[v], expected);
  }
  EXPECT_NE(label_of_block0, label_of_block1);
}

TEST(Parcellation, KEqualsOneIsTheMask) {
  TwoBlockCase tc = twoBlocks(4);
  std::vector<const Volume4D*> runs{&tc.run};
  Parcellation parc = buildParcellation(runs, tc.mask, 1, 7);
  // two spatial components remain two ROIs even for k=1
  for (size_t v = 0; v < tc.mask.data.size(); ++v)
    EXPECT_EQ(parc.labels[v] != 0, tc.mask.data[v] != 0);
}

TEST(Parcellation, DeterministicForFixedSeed) {
  VolumeHeader h = makeHeader({10, 10, 8}, {3, 3, 3});
  BinaryMask mask(h, 1);
  Volume4D run = smoothPhaseRun(h, 30, 9);
  std::vector<const Volume4D*> runs{&run};
  Parcellation a = buildParcellation(runs, mask, 6, 123);
  Parcellation b = buildParcellation(runs, mask, 6, 123);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.achieved_k, b.achieved_k);
}

TEST(Parcellation, PartitionAndConnectivityInvariants) {
  VolumeHeader h = makeHeader({12, 10, 8}, {3, 3, 3});
  BinaryMask mask(h, 0);
  // ellipsoidal mask
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 10; ++j)
      for (int i = 0; i < 12; ++i) {
        double x = (i - 5.5) / 5.5, y = (j - 4.5) / 4.5, z = (k - 3.5) / 3.5;
        mask.at(i, j, k) = (x * x + y * y + z * z) <= 1.0;
      }
  Volume4D run = smoothPhaseRun(h, 30, 10);
  std::vector<const Volume4D*> runs{&run};
  for (int k : {4, 8, 16}) {
    Parcellation parc = buildParcellation(runs, mask, k, 55);
    EXPECT_GE(parc.achieved_k, 1);
    EXPECT_LE(parc.achieved_k, k);
    // partition: in-mask voxels labeled 1..K, background exactly 0
    for (size_t v = 0; v < mask.data.size(); ++v) {
      if (mask.data[v]) {
        EXPECT_GE(parc.labels[v], 1);
        EXPECT_LE(parc.labels[v], parc.achieved_k);
      } else {
        EXPECT_EQ(parc.labels[v], 0);
      }
    }
    // every ROI nonempty and 6-connected
    for (int l = 1; l <= parc.achieved_k; ++l) {
      size_t size = parc.roiSize(l);
      ASSERT_GT(size, 0u) << "k=" << k << " label " << l;
      // BFS from the first voxel of the ROI must reach all of it
      size_t start = 0;
      while (parc.labels[start] != l) ++start;
      std::vector<uint8_t> seen(parc.labels.size(), 0);
      std::vector<size_t> queue{start};
      seen[start] = 1;
      size_t reached = 0;
      while (!queue.empty()) {
        size_t cur = queue.back();
        queue.pop_back();
        ++reached;
        int ci = static_cast<int>(cur % h.dim[0]);
        int cj = static_cast<int>((cur / h.dim[0]) % h.dim[1]);
        int ck = static_cast<int>(cur / (static_cast<size_t>(h.dim[0]) * h.dim[1]));
        const int off[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                               {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
        for (auto& o : off) {
          int ni = ci + o[0], nj = cj + o[1], nk = ck + o[2];
          if (!h.inBounds(ni, nj, nk)) continue;
          size_t nv = h.index(ni, nj, nk);
          if (parc.labels[nv] == l && !seen[nv]) {
            seen[nv] = 1;
            queue.push_back(nv);
          }
        }
      }
      EXPECT_EQ(reached, size) << "k=" << k << " label " << l;
    }
  }
}

TEST(Parcellation, RejectsBadArguments) {
  VolumeHeader h = makeHeader({4, 4, 4}, {3, 3, 3});
  BinaryMask mask(h, 1);
  Volume4D run = smoothPhaseRun(h, 20, 2);
  std::vector<const Volume4D*> runs{&run};
  EXPECT_THROW(buildParcellation(runs, mask, 0, 1), Error);
  EXPECT_THROW(buildParcellation(runs, mask, 1000, 1), Error);
  EXPECT_THROW(buildParcellation({}, mask, 2, 1), Error);
}

TEST(ExtractFeatures, ConstantMapAndLengths) {
  VolumeHeader h = makeHeader({10, 10, 8}, {3, 3, 3});
  BinaryMask mask(h, 1);
  Volume4D run = smoothPhaseRun(h, 30, 12);
  std::vector<const Volume4D*> runs{&run};
  Parcellation parc = buildParcellation(runs, mask, 5, 77);
  std::vector<ContrastMap> contrasts;
  for (int m = 0; m < 3; ++m) {
    ContrastMap c{strCat("cond_", m), Volume3D(h, 2.0f)};
    contrasts.push_back(std::move(c));
  }
  Covariates cov{{"age_years", 44.0}, {"gender_male", 1.0},
                 {"scale_a", 0.2}, {"scale_b", -1.0}};
  FeatureVector f = extractFeatures(contrasts, parc, cov, -7.5);
  EXPECT_EQ(f.roi_means.size(), static_cast<size_t>(3 * parc.achieved_k));
  EXPECT_EQ(f.input().size(), static_cast<size_t>(3 * parc.achieved_k + 4));
  for (double v : f.roi_means) EXPECT_NEAR(v, 2.0, 1e-6);
  EXPECT_EQ(f.outcome, -7.5);
}

TEST(ExtractFeatures, HundredRoisGive304Features) {
  VolumeHeader h = makeHeader({14, 12, 10}, {3, 3, 3});
  BinaryMask mask(h, 1);
  Volume4D run = smoothPhaseRun(h, 30, 13);
  std::vector<const Volume4D*> runs{&run};
  Parcellation parc = buildParcellation(runs, mask, 100, 5);
  ASSERT_EQ(parc.achieved_k, 100);
  std::vector<ContrastMap> contrasts(3, ContrastMap{"c", Volume3D(h, 1.0f)});
  Covariates cov{{"a", 1}, {"b", 2}, {"c", 3}, {"d", 4}};
  FeatureVector f = extractFeatures(contrasts, parc, cov, 0.0);
  EXPECT_EQ(f.input().size(), 304u);
}

TEST(ExtractFeatures, MatchesLoopAccumulationOracle) {
  VolumeHeader h = makeHeader({10, 8, 8}, {3, 3, 3});
  BinaryMask mask(h, 1);
  Volume4D run = smoothPhaseRun(h, 30, 14);
  std::vector<const Volume4D*> runs{&run};
  Parcellation parc = buildParcellation(runs, mask, 4, 3);
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<float> u(-3, 3);
  std::vector<ContrastMap> contrasts;
  for (int m = 0; m < 3; ++m) {
    ContrastMap c{strCat("m", m), Volume3D(h)};
    for (auto& x : c.map.data) x = u(rng);
    contrasts.push_back(std::move(c));
  }
  FeatureVector f = extractFeatures(contrasts, parc, {}, 0.0);
  for (int m = 0; m < 3; ++m)
    for (int l = 1; l <= parc.achieved_k; ++l) {
      double acc = 0;
      size_t n = 0;
      for (size_t v = 0; v < h.nvox(); ++v)
        if (parc.labels[v] == l) {
          acc += contrasts[m].map.data[v];
          ++n;
        }
      EXPECT_NEAR(f.roi_means[m * parc.achieved_k + (l - 1)], acc / n, 1e-6);
    }
}

TEST(ExtractFeatures, LabelPermutationPermutesFeatures) {
  VolumeHeader h = makeHeader({10, 8, 8}, {3, 3, 3});
  BinaryMask mask(h, 1);
  Volume4D run = smoothPhaseRun(h, 30, 16);
  std::vector<const Volume4D*> runs{&run};
  Parcellation parc = buildParcellation(runs, mask, 3, 3);
  ASSERT_EQ(parc.achieved_k, 3);
  std::vector<ContrastMap> contrasts(3, ContrastMap{"c", Volume3D(h)});
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<float> u(-2, 2);
  for (auto& c : contrasts)
    for (auto& x : c.map.data) x = u(rng);
  FeatureVector base = extractFeatures(contrasts, parc, {}, 0.0);
  // permute labels 1->2->3->1
  Parcellation permuted = parc;
  for (auto& l : permuted.labels)
    if (l) l = (l % 3) + 1;
  FeatureVector perm = extractFeatures(contrasts, permuted, {}, 0.0);
  for (int m = 0; m < 3; ++m)
    for (int l = 0; l < 3; ++l)
      EXPECT_NEAR(perm.roi_means[m * 3 + ((l + 1) % 3)],
                  base.roi_means[m * 3 + l], 1e-12);
}
