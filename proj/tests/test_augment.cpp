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

#include "warpaug/augment.hpp"
#include "warpaug/phantom.hpp"

using namespace warpaug;

namespace {

SubjectRecord demoSubject(const std::string& id, double age, Gender g) {
  SubjectRecord s;
  s.subject_id = id;
  s.age_years = age;
  s.gender = g;
  s.outcome_hamd_change = -3.0;
  return s;
}

}  // namespace

TEST(SelectTargets, DeterministicDistinctMatched) {
  SubjectRecord src = demoSubject("src", 34.0, Gender::female);
  std::vector<SubjectRecord> pool;
  for (int i = 0; i < 10; ++i)
    pool.push_back(demoSubject(strCat("p", i), 31.0 + 0.5 * i, Gender::female));
  AugmentationPlan a = selectTargets(src, pool, 5, 99);
  AugmentationPlan b = selectTargets(src, pool, 5, 99);
  EXPECT_EQ(a.target_ids, b.target_ids);
  ASSERT_EQ(a.target_ids.size(), 5u);
  std::set<std::string> distinct(a.target_ids.begin(), a.target_ids.end());
  EXPECT_EQ(distinct.size(), 5u);
  EXPECT_EQ(distinct.count("src"), 0u);
}

TEST(SelectTargets, GenderAndAgeBinConstraints) {
  SubjectRecord src = demoSubject("src", 44.0, Gender::female);
  std::vector<SubjectRecord> pool;
  for (int i = 0; i < 6; ++i)
    pool.push_back(demoSubject(strCat("f", i), 41.0 + i, Gender::female));
  for (int i = 0; i < 6; ++i)
    pool.push_back(demoSubject(strCat("m", i), 41.0 + i, Gender::male));
  AugmentationPlan plan = selectTargets(src, pool, 5, 7);
  for (const auto& id : plan.target_ids) EXPECT_EQ(id[0], 'f');
}

TEST(SelectTargets, RelaxationThenErrorWithEligibleCount) {
  SubjectRecord src = demoSubject("src", 44.0, Gender::male);
  std::vector<SubjectRecord> pool;
  // 3 exact-bin matches, 1 more within one bin, rest ineligible
  pool.push_back(demoSubject("a", 41.0, Gender::male));
  pool.push_back(demoSubject("b", 45.0, Gender::male));
  pool.push_back(demoSubject("c", 49.0, Gender::male));
  pool.push_back(demoSubject("d", 52.0, Gender::male));    // +-1 bin
  pool.push_back(demoSubject("e", 75.0, Gender::male));    // too far
  pool.push_back(demoSubject("f", 44.0, Gender::female));  // wrong gender
  try {
    selectTargets(src, pool, 5, 3);
    FAIL() << "expected insufficient-candidates error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::insufficient_candidates);
    EXPECT_NE(std::string(e.what()).find("4"), std::string::npos);
  }
  // factor 4 succeeds thanks to the relaxed bin
  AugmentationPlan plan = selectTargets(src, pool, 4, 3);
  EXPECT_EQ(plan.target_ids.size(), 4u);
}

namespace {

PhantomCohort augCohort(int n, uint64_t seed) {
  PhantomConfig c = defaultPhantomConfig();
  c.n_subjects = n;
  c.n_frames = 36;
  c.noise_sigma = 0.02;
  c.deformation_amplitude_mm = 4.0;
  c.seed = seed;
  return generateCohort(c);
}

}  // namespace

TEST(AugmentOne, SelfAugmentationPreservesMeanFrame) {
  PhantomCohort cohort = augCohort(1, 31);
  const SubjectRecord& s = cohort.subjects[0];
  SyntheticSample synth = augmentOne(s, s, fastAugmentOptions(), 5);
  EXPECT_EQ(synth.synthetic_id, "sub-000__in__sub-000");
  // compare against the original mean resampled onto the synthetic grid
  Volume3D synth_mean = meanFrame(*synth.fmri);
  Volume3D orig_mean = meanFrame(*s.fmri);
  Volume3D orig_on_grid = resample(orig_mean, CompositeTransform::identity(),
                                   synth_mean.header);
  BinaryMask mask = extractBrain(orig_on_grid, fmriMaskParams());
  EXPECT_GE(correlation(synth_mean, orig_on_grid, &mask), 0.98);
}

TEST(AugmentOne, TransfersAnatomyAndSignal) {
  PhantomCohort cohort = augCohort(2, 32);
  const SubjectRecord& source = cohort.subjects[0];
  const SubjectRecord& target = cohort.subjects[1];
  SyntheticSample synth = augmentOne(source, target, fastAugmentOptions(), 6);

  // label fidelity: covariates and outcome copied bitwise
  EXPECT_EQ(synth.outcome_hamd_change, source.outcome_hamd_change);
  EXPECT_EQ(synth.covariates, source.covariates);

  // anatomy: the synthetic brain mask matches the target anatomy
  VolumeHeader synth_grid = synth.fmri->frames[0].header;
  BinaryMask synth_mask =
      extractBrain(meanFrame(*synth.fmri), fmriMaskParams());
  BinaryMask target_mask = analyticBrainMask(cohort.truth, 1, synth_grid);
  BinaryMask source_mask = analyticBrainMask(cohort.truth, 0, synth_grid);
  double dice_synth = diceCoefficient(synth_mask, target_mask);
  double dice_source = diceCoefficient(source_mask, target_mask);
  EXPECT_GE(dice_synth, 0.90);
  EXPECT_GT(dice_synth, dice_source);

  // signal: the planted blob lands at the target's corresponding landmark
  GlmResult glm = fitGlm(*synth.fmri, cohort.truth.design);
  const auto& region = cohort.truth.config.activation_regions[0];
  const Volume3D& beta = glm.contrasts[region.condition].map;
  Eigen::Vector3d expected_world =
      landmarkPosition(cohort.truth, 1, region.landmark).world;
  // amplitude-weighted centroid of strong positive betas
  float peak = *std::max_element(beta.data.begin(), beta.data.end());
  ASSERT_GT(peak, 0.1f);
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  double wsum = 0;
  for (int k = 0; k < synth_grid.dim[2]; ++k)
    for (int j = 0; j < synth_grid.dim[1]; ++j)
      for (int i = 0; i < synth_grid.dim[0]; ++i) {
        double b = beta.at(i, j, k);
        if (b < 0.5 * peak) continue;
        centroid += b * synth_grid.voxelToWorld(Eigen::Vector3d(i, j, k));
        wsum += b;
      }
  ASSERT_GT(wsum, 0.0);
  centroid /= wsum;
  double err_voxels =
      (centroid - expected_world).norm() / synth_grid.voxel_size[0];
  EXPECT_LE(err_voxels, 2.0);
}

TEST(AugmentCohort, FactorArithmeticAndDeterminism) {
  PhantomCohort cohort = augCohort(5, 33);
  std::vector<SubjectRecord> train(cohort.subjects.begin(),
                                   cohort.subjects.begin() + 2);
  // make everyone eligible for everyone: same gender and age bin
  for (auto& s : cohort.subjects) {
    // records are value types; adjust local copies used as the pool
  }
  std::vector<SubjectRecord> pool = cohort.subjects;
  for (auto& s : pool) {
    s.age_years = 40.0;
    s.gender = Gender::female;
  }
  for (auto& s : train) {
    s.age_years = 40.0;
    s.gender = Gender::female;
  }
  AugmentOptions fast = fastAugmentOptions();
  auto synths = augmentCohort(train, pool, 2, fast, 44);
  EXPECT_EQ(synths.size(), 4u);  // 2 train x factor 2
  for (const auto& s : synths) {
    EXPECT_NE(s.source_id, s.target_id);
    EXPECT_EQ(s.synthetic_id, syntheticId(s.source_id, s.target_id));
  }
  auto again = augmentCohort(train, pool, 2, fast, 44);
  for (size_t i = 0; i < synths.size(); ++i) {
    EXPECT_EQ(synths[i].synthetic_id, again[i].synthetic_id);
    for (size_t f = 0; f < synths[i].fmri->frames.size(); ++f)
      EXPECT_EQ(synths[i].fmri->frames[f].data,
                again[i].fmri->frames[f].data);
  }
  EXPECT_TRUE(augmentCohort(train, pool, 0, fast, 44).empty());
}

TEST(AugmentCohort, PoolContainingExcludedSubjectIsLeakage) {
  PhantomCohort cohort = augCohort(3, 34);
  std::vector<SubjectRecord> train{cohort.subjects[0]};
  std::vector<SubjectRecord> pool = cohort.subjects;
  try {
    augmentCohort(train, pool, 1, fastAugmentOptions(), 1,
                  {cohort.subjects[2].subject_id});
    FAIL() << "expected leakage error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::leakage);
  }
}

TEST(AugmentOne, FailuresNameTheStep) {
  PhantomCohort cohort = augCohort(2, 35);
  SubjectRecord broken = cohort.subjects[1];
  auto flat = std::make_shared<Volume3D>(cohort.subjects[1].smri->header, 1.0f);
  broken.smri = flat;  // constant image: extraction must fail
  try {
    augmentOne(cohort.subjects[0], broken, fastAugmentOptions(), 2);
    FAIL() << "expected augmentation error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::augmentation);
    EXPECT_NE(std::string(e.what()).find("sub-001"), std::string::npos);
  }
}
