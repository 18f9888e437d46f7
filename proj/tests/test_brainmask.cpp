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

#include "warpaug/brainmask.hpp"

using namespace warpaug;

namespace {

// analytic ellipsoid membership, the ground-truth oracle for extraction
bool insideEllipsoid(const Eigen::Vector3d& world, const Eigen::Vector3d& c,
                     const Eigen::Vector3d& radii) {
  Eigen::Vector3d d = (world - c).cwiseQuotient(radii);
  return d.squaredNorm() <= 1.0;
}

Volume3D ellipsoidPhantom(std::array<int, 3> dim, Eigen::Vector3d voxel,
                          Eigen::Vector3d center_mm, Eigen::Vector3d radii_mm,
                          double fg = 100.0, double noise_sigma = 0.0,
                          uint64_t seed = 7) {
  Volume3D v(makeHeader(dim, voxel));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise_sigma);
  for (int k = 0; k < dim[2]; ++k)
    for (int j = 0; j < dim[1]; ++j)
      for (int i = 0; i < dim[0]; ++i) {
        Eigen::Vector3d w = v.header.voxelToWorld({double(i), double(j), double(k)});
        double val = insideEllipsoid(w, center_mm, radii_mm) ? fg : 0.0;
        if (noise_sigma > 0) val += n(rng);
        v.at(i, j, k) = static_cast<float>(val);
      }
  return v;
}

BinaryMask ellipsoidTruth(const VolumeHeader& h, Eigen::Vector3d center_mm,
                          Eigen::Vector3d radii_mm) {
  BinaryMask m(h);
  for (int k = 0; k < h.dim[2]; ++k)
    for (int j = 0; j < h.dim[1]; ++j)
      for (int i = 0; i < h.dim[0]; ++i) {
        Eigen::Vector3d w = h.voxelToWorld({double(i), double(j), double(k)});
        m.at(i, j, k) = insideEllipsoid(w, center_mm, radii_mm);
      }
  return m;
}

}  // namespace

TEST(ExtractBrain, NoisyEllipsoidDiceAtLeast098) {
  std::array<int, 3> dim{32, 32, 32};
  Eigen::Vector3d voxel{2, 2, 2}, center{31, 31, 31}, radii{22, 18, 20};
  Volume3D vol = ellipsoidPhantom(dim, voxel, center, radii, 100.0, 1.0);
  BinaryMask mask = extractBrain(vol, smriMaskParams());
  BinaryMask truth = ellipsoidTruth(vol.header, center, radii);
  EXPECT_GE(diceCoefficient(mask, truth), 0.98);
}

TEST(ExtractBrain, EllipsoidVolumeWithin5Percent) {
  std::array<int, 3> dim{32, 32, 32};
  Eigen::Vector3d voxel{2, 2, 2}, center{31, 31, 31}, radii{20, 16, 18};
  Volume3D vol = ellipsoidPhantom(dim, voxel, center, radii, 100.0, 0.5);
  BinaryMask mask = extractBrain(vol, smriMaskParams());
  double analytic = 4.0 / 3.0 * M_PI * radii.prod();
  double measured = static_cast<double>(mask.count()) * voxel.prod();
  EXPECT_NEAR(measured, analytic, 0.05 * analytic);
}

TEST(ExtractBrain, IdempotentOnCleanBinaryBall) {
  std::array<int, 3> dim{24, 24, 24};
  Eigen::Vector3d voxel{2, 2, 2}, center{23, 23, 23}, radii{16, 16, 16};
  Volume3D vol = ellipsoidPhantom(dim, voxel, center, radii, 1.0, 0.0);
  BinaryMask mask = extractBrain(vol, smriMaskParams());
  for (size_t i = 0; i < vol.data.size(); ++i)
    EXPECT_EQ(mask.data[i], vol.data[i] > 0.5f ? 1 : 0);
}

TEST(ExtractBrain, ConstantVolumeIsExtractionError) {
  Volume3D vol(makeHeader({8, 8, 8}, {2, 2, 2}), 5.0f);
  try {
    extractBrain(vol, smriMaskParams());
    FAIL() << "expected extraction error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::extraction);
  }
}

TEST(ExtractBrain, FillsInternalHoles) {
  std::array<int, 3> dim{24, 24, 24};
  Eigen::Vector3d voxel{2, 2, 2}, center{23, 23, 23}, radii{18, 18, 18};
  Volume3D vol = ellipsoidPhantom(dim, voxel, center, radii, 100.0, 0.0);
  // carve a cavity well inside the ball
  for (int k = 10; k < 13; ++k)
    for (int j = 10; j < 13; ++j)
      for (int i = 10; i < 13; ++i) vol.at(i, j, k) = 0.0f;
  BinaryMask mask = extractBrain(vol, smriMaskParams());
  for (int k = 10; k < 13; ++k)
    for (int j = 10; j < 13; ++j)
      for (int i = 10; i < 13; ++i) EXPECT_EQ(mask.at(i, j, k), 1);
}

TEST(ExtractBrain, InvariantToAffineIntensityRescaling) {
  std::array<int, 3> dim{20, 20, 20};
  Eigen::Vector3d voxel{2, 2, 2}, center{19, 19, 19}, radii{14, 12, 13};
  Volume3D vol = ellipsoidPhantom(dim, voxel, center, radii, 100.0, 2.0);
  BinaryMask base = extractBrain(vol, smriMaskParams());
  for (auto [a, b] : {std::pair{3.0f, 11.0f}, {0.25f, -40.0f}, {7.5f, 0.0f}}) {
    Volume3D scaled = vol;
    for (auto& x : scaled.data) x = a * x + b;
    BinaryMask m = extractBrain(scaled, smriMaskParams());
    EXPECT_EQ(m.data, base.data) << "a=" << a << " b=" << b;
  }
}

TEST(ApplyMask, AllOnesIsIdentity) {
  Volume3D v(makeHeader({4, 4, 4}, {1, 1, 1}));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto& x : v.data) x = u(rng);
  BinaryMask ones(v.header, 1);
  EXPECT_EQ(applyMask(v, ones).data, v.data);
}

TEST(ApplyMask, SingleSurvivingVoxel) {
  Volume3D v(makeHeader({3, 3, 3}, {1, 1, 1}), 4.0f);
  BinaryMask m(v.header, 0);
  m.at(1, 2, 0) = 1;
  Volume3D out = applyMask(v, m);
  size_t nonzero = 0;
  for (float x : out.data) nonzero += (x != 0.0f);
  EXPECT_EQ(nonzero, 1u);
  EXPECT_FLOAT_EQ(out.at(1, 2, 0), 4.0f);
}

TEST(ApplyMask, MatchesElementwiseProductOracle) {
  Volume3D v(makeHeader({5, 4, 3}, {1, 1, 1}));
  BinaryMask m(v.header);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(-2, 2);
  std::bernoulli_distribution bit(0.4);
  for (auto& x : v.data) x = u(rng);
  for (auto& x : m.data) x = bit(rng);
  Volume3D out = applyMask(v, m);
  for (size_t i = 0; i < v.data.size(); ++i)
    EXPECT_FLOAT_EQ(out.data[i], v.data[i] * m.data[i]);
}

TEST(ApplyMask, GridMismatchIsShapeError) {
  Volume3D v(makeHeader({4, 4, 4}, {1, 1, 1}));
  BinaryMask m(makeHeader({4, 4, 5}, {1, 1, 1}));
  EXPECT_THROW(applyMask(v, m), Error);
}

TEST(Dice, KnownValues) {
  VolumeHeader h = makeHeader({10, 10, 1}, {1, 1, 1});
  BinaryMask a(h), b(h);
  for (int i = 0; i < 100; ++i) a.data[i] = 1;
  EXPECT_DOUBLE_EQ(diceCoefficient(a, a), 1.0);

  // |A|=100, |B|=100, overlap 50 -> 0.5 (on a larger grid)
  VolumeHeader h2 = makeHeader({200, 1, 1}, {1, 1, 1});
  BinaryMask c(h2), d(h2);
  for (int i = 0; i < 100; ++i) c.data[i] = 1;
  for (int i = 50; i < 150; ++i) d.data[i] = 1;
  EXPECT_DOUBLE_EQ(diceCoefficient(c, d), 0.5);

  BinaryMask e(h2), f(h2);
  for (int i = 0; i < 30; ++i) e.data[i] = 1;
  for (int i = 40; i < 70; ++i) f.data[i] = 1;
  EXPECT_DOUBLE_EQ(diceCoefficient(e, f), 0.0);

  BinaryMask empty1(h2), empty2(h2);
  EXPECT_THROW(diceCoefficient(empty1, empty2), Error);
}
