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

#include <cstdio>
#include <filesystem>
#include <random>

#include "warpaug/nifti.hpp"
#include "warpaug/smoothing.hpp"
#include "warpaug/volume.hpp"

using namespace warpaug;

namespace {

std::string tmpPath(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "warpaug_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

Volume3D randomVolume(std::array<int, 3> dim, uint64_t seed,
                      Eigen::Vector3d voxel = {2.0, 2.0, 2.0}) {
  Volume3D v(makeHeader(dim, voxel, {-10.0, 4.0, 7.5}));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-5.0f, 5.0f);
  for (auto& x : v.data) x = u(rng);
  return v;
}

}  // namespace

TEST(VolumeHeader, ValidatesAffineAgainstVoxelSize) {
  VolumeHeader h = makeHeader({4, 4, 4}, {2.0, 2.0, 2.0});
  EXPECT_NO_THROW(h.validate());
  h.voxel_size[1] = 3.0;  // disagrees with affine column norm
  EXPECT_THROW(h.validate(), Error);
}

TEST(Volume3D, InvariantChecks) {
  Volume3D v(makeHeader({2, 2, 2}, {1, 1, 1}));
  EXPECT_NO_THROW(v.validate());
  v.data[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(v.validate(), Error);
  v.data[3] = 0.0f;
  v.data.pop_back();
  EXPECT_THROW(v.validate(), Error);
}

TEST(Nifti, RoundTripIdentity3D) {
  Volume3D v(makeHeader({4, 4, 4}, {2.0, 2.5, 3.0}, {-8.0, 1.0, 2.5}));
  for (auto& x : v.data) x = 1.0f;
  auto path = tmpPath("roundtrip3d.nii");
  writeNifti(v, path);
  Volume3D back = readNifti3D(path);
  EXPECT_EQ(back.header.dim, v.header.dim);
  EXPECT_EQ(back.data, v.data);
  EXPECT_LT((back.header.affine - v.header.affine).cwiseAbs().maxCoeff(),
            1e-6 * std::max(1.0, v.header.affine.cwiseAbs().maxCoeff()));
}

TEST(Nifti, RoundTripRandomDataBitExact) {
  Volume3D v = randomVolume({5, 7, 3}, 17);
  auto path = tmpPath("roundtrip_rand.nii.gz");
  writeNifti(v, path);
  Volume3D back = readNifti3D(path);
  EXPECT_EQ(back.data, v.data);  // float32 all the way: bit-exact
}

TEST(Nifti, FourDRoundTripReportsFrameCount) {
  VolumeHeader spatial = makeHeader({3, 3, 3}, {3.0, 3.0, 3.0});
  Volume4D v(spatial, 10, 2.0);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& f : v.frames)
    for (auto& x : f.data) x = u(rng);
  auto path = tmpPath("roundtrip4d.nii");
  writeNifti(v, path);
  Volume4D back = readNifti4D(path);
  ASSERT_EQ(back.frames.size(), 10u);
  EXPECT_NEAR(back.header.time_step, 2.0, 1e-6);
  for (int f = 0; f < 10; ++f) EXPECT_EQ(back.frames[f].data, v.frames[f].data);
}

TEST(Nifti, SclSlopeInterApplied) {
  // stored int16 value 3 with scl_slope=2, scl_inter=1 reads back as 7
  detail::Nifti1Header h{};
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = 348;
  h.dim[0] = 3;
  h.dim[1] = h.dim[2] = h.dim[3] = 1;
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.datatype = 4;  // int16
  h.bitpix = 16;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = h.pixdim[2] = h.pixdim[3] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 2.0f;
  h.scl_inter = 1.0f;
  std::memcpy(h.magic, "n+1", 4);
  auto path = tmpPath("scl.nii");
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(&h), sizeof(h));
  const char ext[4] = {0, 0, 0, 0};
  f.write(ext, 4);
  int16_t stored = 3;
  f.write(reinterpret_cast<const char*>(&stored), 2);
  f.close();
  Volume3D v = readNifti3D(path);
  EXPECT_FLOAT_EQ(v.data[0], 7.0f);
}

TEST(Nifti, TruncatedFileIsFormatError) {
  detail::Nifti1Header h{};
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = 348;
  h.dim[0] = 3;
  h.dim[1] = h.dim[2] = h.dim[3] = 4;
  h.datatype = 16;
  h.bitpix = 32;
  h.vox_offset = 352.0f;
  std::memcpy(h.magic, "n+1", 4);
  auto path = tmpPath("truncated.nii");
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(&h), sizeof(h));  // header only
  f.close();
  try {
    readNifti(path);
    FAIL() << "expected format error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
  }
}

TEST(Nifti, BadMagicIsFormatError) {
  auto path = tmpPath("badmagic.nii");
  std::ofstream f(path, std::ios::binary);
  std::vector<char> junk(400, 0);
  junk[0] = 92;  // sizeof_hdr wrong too
  f.write(junk.data(), junk.size());
  f.close();
  EXPECT_THROW(readNifti(path), Error);
}

TEST(Nifti, WriteRefusesNaN) {
  Volume3D v(makeHeader({2, 2, 2}, {1, 1, 1}));
  v.data[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(writeNifti(v, tmpPath("nan.nii")), Error);
}

TEST(Trilinear, ExactOnLatticePoints) {
  Volume3D v = randomVolume({5, 6, 4}, 3);
  EXPECT_DOUBLE_EQ(trilinearSample(v, {2, 3, 1}), v.at(2, 3, 1));
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < 5; ++i)
        EXPECT_NEAR(trilinearSample(v, {double(i), double(j), double(k)}),
                    v.at(i, j, k), 1e-6);
}

TEST(Trilinear, MidpointIsAverage) {
  Volume3D v(makeHeader({3, 3, 3}, {1, 1, 1}));
  v.at(0, 1, 1) = 0.0f;
  v.at(1, 1, 1) = 10.0f;
  EXPECT_NEAR(trilinearSample(v, {0.5, 1, 1}), 5.0, 1e-12);
}

TEST(Trilinear, OutsideIsZero) {
  Volume3D v = randomVolume({4, 4, 4}, 9);
  EXPECT_DOUBLE_EQ(trilinearSample(v, {-5, -5, -5}), 0.0);
  EXPECT_DOUBLE_EQ(trilinearSample(v, {100, 1, 1}), 0.0);
}

TEST(Trilinear, LinearAlongAxes) {
  // a ramp image is reproduced exactly at fractional offsets
  Volume3D v(makeHeader({6, 4, 4}, {1, 1, 1}));
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 6; ++i) v.at(i, j, k) = static_cast<float>(3 * i);
  for (double x = 0.0; x <= 4.0; x += 0.25)
    EXPECT_NEAR(trilinearSample(v, {x, 2, 2}), 3.0 * x, 1e-9);
}

TEST(Smoothing, PreservesConstants) {
  Volume3D v(makeHeader({8, 8, 8}, {3, 3, 3}), 3.0f);
  Volume3D s = gaussianSmooth(v, 6.0);
  for (float x : s.data) EXPECT_NEAR(x, 3.0f, 1e-6);
}

TEST(Smoothing, SigmaConversion) {
  EXPECT_NEAR(fwhmToSigmaVoxels(6.0, 3.0), 0.849322, 1e-6);
  EXPECT_NEAR(kFwhmToSigma, 2.35482, 1e-5);
}

TEST(Smoothing, RejectsNonPositiveFwhm) {
  Volume3D v(makeHeader({4, 4, 4}, {1, 1, 1}));
  EXPECT_THROW(gaussianSmooth(v, 0.0), Error);
  EXPECT_THROW(gaussianSmooth(v, -2.0), Error);
}

namespace {

// independent dense 3D convolution with the same truncated kernel and edge
// renormalization; quadratic cost, test use only
Volume3D denseConvOracle(const Volume3D& in, double fwhm_mm) {
  std::array<std::vector<double>, 3> k1;
  std::array<int, 3> radius;
  for (int d = 0; d < 3; ++d) {
    double sigma = fwhmToSigmaVoxels(fwhm_mm, in.header.voxel_size[d]);
    radius[d] = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
    k1[d].resize(2 * radius[d] + 1);
    double sum = 0;
    for (int i = -radius[d]; i <= radius[d]; ++i) {
      k1[d][i + radius[d]] = std::exp(-0.5 * i * i / (sigma * sigma));
      sum += k1[d][i + radius[d]];
    }
    for (auto& w : k1[d]) w /= sum;
  }
  Volume3D out(in.header);
  const auto& dim = in.header.dim;
  for (int k = 0; k < dim[2]; ++k)
    for (int j = 0; j < dim[1]; ++j)
      for (int i = 0; i < dim[0]; ++i) {
        double acc = 0, wsum = 0;
        for (int dz = -radius[2]; dz <= radius[2]; ++dz)
          for (int dy = -radius[1]; dy <= radius[1]; ++dy)
            for (int dx = -radius[0]; dx <= radius[0]; ++dx) {
              int ni = i + dx, nj = j + dy, nk = k + dz;
              if (!in.header.inBounds(ni, nj, nk)) continue;
              double w = k1[0][dx + radius[0]] * k1[1][dy + radius[1]] *
                         k1[2][dz + radius[2]];
              acc += w * in.at(ni, nj, nk);
              wsum += w;
            }
        out.at(i, j, k) = static_cast<float>(acc / wsum);
      }
  return out;
}

}  // namespace

TEST(Smoothing, MatchesDenseConvolutionOracle) {
  Volume3D v(makeHeader({9, 9, 9}, {3, 3, 3}));
  v.at(4, 4, 4) = 1.0f;  // unit impulse
  Volume3D fast = gaussianSmooth(v, 6.0);
  Volume3D slow = denseConvOracle(v, 6.0);
  EXPECT_LT(maxAbsDiff(fast, slow), 1e-6);

  Volume3D r = randomVolume({7, 6, 8}, 21, {3, 3, 3});
  EXPECT_LT(maxAbsDiff(gaussianSmooth(r, 6.0), denseConvOracle(r, 6.0)), 1e-6);
}

TEST(Smoothing, PreservesMeanReducesVariance) {
  Volume3D v = randomVolume({10, 10, 10}, 33, {2, 2, 2});
  Volume3D s = gaussianSmooth(v, 5.0);
  double m0 = meanValue(v), m1 = meanValue(s);
  EXPECT_NEAR(m1, m0, 1e-4 * std::max(1.0, std::abs(m0)) + 2e-2);
  auto variance = [](const Volume3D& x) {
    double m = meanValue(x), acc = 0;
    for (float t : x.data) acc += (t - m) * (t - m);
    return acc / x.data.size();
  };
  EXPECT_LT(variance(s), variance(v));
}

TEST(MeanFrame, SingleFrameIsIdentity) {
  VolumeHeader h = makeHeader({3, 3, 3}, {1, 1, 1});
  Volume4D v(h, 1, 2.0);
  v.frames[0] = randomVolume({3, 3, 3}, 8, {1, 1, 1});
  v.frames[0].header = h;
  Volume3D m = meanFrame(v);
  EXPECT_EQ(m.data, v.frames[0].data);
}

TEST(MeanFrame, Arithmetic) {
  VolumeHeader h = makeHeader({2, 2, 2}, {1, 1, 1});
  Volume4D v(h, 2, 2.0);
  for (auto& x : v.frames[0].data) x = 2.0f;
  for (auto& x : v.frames[1].data) x = 4.0f;
  Volume3D m = meanFrame(v);
  for (float x : m.data) EXPECT_FLOAT_EQ(x, 3.0f);
}

TEST(MeanFrame, MatchesLoopOracleAndCommutesWithLinearMaps) {
  VolumeHeader h = makeHeader({4, 4, 4}, {2, 2, 2});
  Volume4D v(h, 10, 1.5);
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  for (auto& f : v.frames)
    for (auto& x : f.data) x = u(rng);
  Volume3D m = meanFrame(v);
  for (size_t idx = 0; idx < h.nvox(); ++idx) {
    double acc = 0;
    for (const auto& f : v.frames) acc += f.data[idx];
    EXPECT_NEAR(m.data[idx], acc / 10.0, 1e-6);
  }
  // meanFrame(a*V + b) == a*meanFrame(V) + b
  Volume4D w = v;
  for (auto& f : w.frames)
    for (auto& x : f.data) x = 2.5f * x - 1.25f;
  Volume3D mw = meanFrame(w);
  for (size_t idx = 0; idx < h.nvox(); ++idx)
    EXPECT_NEAR(mw.data[idx], 2.5 * m.data[idx] - 1.25, 1e-5);
}
