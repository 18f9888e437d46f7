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

/// @file augment.hpp
/// @brief Coregistration-based fMRI augmentation: resamples a source
///        subject's fMRI signal onto a target subject's anatomy.
///
/// Three steps per synthetic sample:
///   a. source fMRI mean frame -> source sMRI (quick preset, mutual
///      information; cross-modal)
///   b. source sMRI -> target sMRI (full preset, LNCC; same modality)
///   c. the composed transform pulls every frame of the source fMRI onto the
///      target anatomy's grid at the functional voxel size in one
///      interpolation pass.
///
/// Covariates and the outcome are copied from the source; only the imaging
/// data is synthesized.

#ifndef WARPAUG_AUGMENT_HPP
#define WARPAUG_AUGMENT_HPP

#include <future>
#include <map>
#include <set>

#include "warpaug/brainmask.hpp"
#include "warpaug/registration.hpp"
#include "warpaug/subjects.hpp"

namespace warpaug {

struct AugmentationPlan {
  std::string source_id;
  std::vector<std::string> target_ids;
  uint64_t seed = 0;
};

struct SyntheticSample {
  std::string synthetic_id;
  std::shared_ptr<const Volume4D> fmri;  // in target native space
  std::string source_id;
  std::string target_id;
  Covariates covariates;        // bitwise copies from the source
  double outcome_hamd_change = 0.0;
  double age_years = 0.0;
  Gender gender = Gender::female;
  uint64_t seed = 0;
};

struct AugmentOptions {
  MaskParams smri_mask = smriMaskParams();
  MaskParams fmri_mask = fmriMaskParams();
  RegistrationParams step_a_affine =
      affineParams(MetricKind::mutual_information, RegPreset::quick);
  RegistrationParams step_a_diffeo =
      diffeoParams(MetricKind::mutual_information, RegPreset::quick);
  RegistrationParams step_b_affine =
      affineParams(MetricKind::lncc, RegPreset::full);
  RegistrationParams step_b_diffeo =
      diffeoParams(MetricKind::lncc, RegPreset::full);
  unsigned jobs = 0;  // 0: hardware concurrency
};

/// Reduced iteration counts for desk-scale experiment loops.
inline AugmentOptions fastAugmentOptions() {
  AugmentOptions o;
  o.step_a_affine.max_iterations_per_level = 15;
  o.step_a_diffeo.max_iterations_per_level = 12;
  o.step_b_affine.max_iterations_per_level = 20;
  o.step_b_diffeo.max_iterations_per_level = 20;
  return o;
}

inline std::string syntheticId(const std::string& source_id,
                               const std::string& target_id) {
  return source_id + "__in__" + target_id;
}

/// Warps one source fMRI into one target anatomy (Fig-style steps a-c).
inline SyntheticSample augmentOne(const SubjectRecord& source,
                                  const SubjectRecord& target,
                                  const AugmentOptions& opts = {},
                                  uint64_t seed = 0) {
  if (!source.smri || !source.fmri || !target.smri)
    throw Error(ErrorKind::augmentation, "missing images for augmentation");

  CompositeTransform step_a, step_b;
  BinaryMask source_smri_mask, target_smri_mask;
  try {
    source_smri_mask = extractBrain(*source.smri, opts.smri_mask);
    target_smri_mask = extractBrain(*target.smri, opts.smri_mask);
  } catch (const Error& e) {
    throw Error(ErrorKind::augmentation,
                strCat("brain extraction failed for pair ", source.subject_id,
                       " -> ", target.subject_id, ": ", e.what()));
  }

  try {
    Volume3D fmean = meanFrame(*source.fmri);
    BinaryMask fmean_mask = extractBrain(fmean, opts.fmri_mask);
    Volume3D fixed_a = applyMask(*source.smri, source_smri_mask);
    Volume3D moving_a = applyMask(fmean, fmean_mask);
    AffineResult aff_a =
        registerAffine(fixed_a, moving_a, source_smri_mask, opts.step_a_affine);
    step_a = registerDiffeomorphic(fixed_a, moving_a, aff_a.transform,
                                   opts.step_a_diffeo, &source_smri_mask);
  } catch (const Error& e) {
    throw Error(ErrorKind::augmentation,
                strCat("step_a failed for ", source.subject_id, ": ",
                       e.what()));
  }

  try {
    Volume3D fixed_b = applyMask(*target.smri, target_smri_mask);
    Volume3D moving_b = applyMask(*source.smri, source_smri_mask);
    AffineResult aff_b =
        registerAffine(fixed_b, moving_b, target_smri_mask, opts.step_b_affine);
    step_b = registerDiffeomorphic(fixed_b, moving_b, aff_b.transform,
                                   opts.step_b_diffeo, &target_smri_mask);
  } catch (const Error& e) {
    throw Error(ErrorKind::augmentation,
                strCat("step_b failed for ", source.subject_id, " -> ",
                       target.subject_id, ": ", e.what()));
  }

  // step c: target anatomy's bounding grid at the functional voxel size,
  // one interpolation pass through the whole chain
  VolumeHeader reference = resampledHeader(
      target.smri->header, source.fmri->frames[0].header.voxel_size);
  CompositeTransform chain = composeTransforms(step_b, step_a);
  auto warped = std::make_shared<Volume4D>(
      resample(*source.fmri, chain, reference));

  SyntheticSample out;
  out.synthetic_id = syntheticId(source.subject_id, target.subject_id);
  out.fmri = std::move(warped);
  out.source_id = source.subject_id;
  out.target_id = target.subject_id;
  out.covariates = source.covariates;
  out.outcome_hamd_change = source.outcome_hamd_change;
  out.age_years = source.age_years;
  out.gender = source.gender;
  out.seed = seed;
  return out;
}

/// Uniform sample of `factor` matched targets: same gender, same 10-year age
/// bin; falls back to +-1 bin when the exact bin runs out; errors with the
/// eligible count when even that is not enough. Scanning a single seeded
/// permutation keeps selections stable across mildly different pools.
inline AugmentationPlan selectTargets(const SubjectRecord& source,
                                      const std::vector<SubjectRecord>& pool,
                                      int factor, uint64_t seed) {
  if (factor < 0) throw Error(ErrorKind::parameter, "negative factor");
  AugmentationPlan plan;
  plan.source_id = source.subject_id;
  plan.seed = seed;
  if (factor == 0) return plan;

  std::vector<size_t> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  int source_bin = ageBin(source.age_years);
  auto scan = [&](int max_bin_distance) {
    for (size_t idx : order) {
      if (static_cast<int>(plan.target_ids.size()) >= factor) break;
      const SubjectRecord& cand = pool[idx];
      if (cand.subject_id == source.subject_id) continue;
      if (cand.gender != source.gender) continue;
      if (std::abs(ageBin(cand.age_years) - source_bin) > max_bin_distance)
        continue;
      if (std::find(plan.target_ids.begin(), plan.target_ids.end(),
                    cand.subject_id) != plan.target_ids.end())
        continue;
      plan.target_ids.push_back(cand.subject_id);
    }
  };
  scan(0);
  if (static_cast<int>(plan.target_ids.size()) < factor) scan(1);
  if (static_cast<int>(plan.target_ids.size()) < factor)
    throw Error(ErrorKind::insufficient_candidates,
                strCat("source ", source.subject_id, " needs ", factor,
                       " targets but only ", plan.target_ids.size(),
                       " candidates are eligible"));
  return plan;
}

/// Memoizes warped volumes by (source, target); the warp itself does not
/// depend on fold membership, only eligibility does.
class AugmentationCache {
 public:
  using Key = std::pair<std::string, std::string>;

  std::shared_ptr<const Volume4D> getOrCompute(
      const Key& key, const std::function<std::shared_ptr<const Volume4D>()>&
                          compute) {
    std::shared_future<std::shared_ptr<const Volume4D>> fut;
    bool owner = false;
    {
      std::lock_guard<std::mutex> lk(mu_);
      auto it = cache_.find(key);
      if (it == cache_.end()) {
        auto task = std::make_shared<
            std::packaged_task<std::shared_ptr<const Volume4D>()>>(compute);
        fut = task->get_future().share();
        cache_.emplace(key, fut);
        tasks_.emplace(key, task);
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (owner) {
      std::shared_ptr<std::packaged_task<std::shared_ptr<const Volume4D>()>>
          task;
      {
        std::lock_guard<std::mutex> lk(mu_);
        task = tasks_.at(key);
        tasks_.erase(key);
      }
      (*task)();
    }
    return fut.get();
  }

  size_t size() const {
    std::lock_guard<std::mutex> lk(mu_);
    return cache_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<Key, std::shared_future<std::shared_ptr<const Volume4D>>> cache_;
  std::map<Key,
           std::shared_ptr<std::packaged_task<std::shared_ptr<const Volume4D>()>>>
      tasks_;
};

/// Augments every training subject by `factor` matched targets. Fails fast:
/// a single failed pair aborts the cohort (partial cohorts would skew the
/// factor). Pair warps run in parallel; per-pair seeds derive from
/// (seed, source, target) so results are schedule-independent.
inline std::vector<SyntheticSample> augmentCohort(
    const std::vector<SubjectRecord>& train,
    const std::vector<SubjectRecord>& pool, int factor,
    const AugmentOptions& opts, uint64_t seed,
    const std::set<std::string>& exclusion_ids = {}) {
  for (const auto& p : pool)
    if (exclusion_ids.count(p.subject_id))
      throw Error(ErrorKind::leakage,
                  "target pool contains excluded subject " + p.subject_id);
  std::map<std::string, const SubjectRecord*> by_id;
  for (const auto& p : pool) by_id[p.subject_id] = &p;

  struct Pair {
    const SubjectRecord* source;
    const SubjectRecord* target;
    uint64_t seed;
  };
  std::vector<Pair> pairs;
  for (const auto& src : train) {
    AugmentationPlan plan = selectTargets(
        src, pool, factor, deriveSeed(seed, "plan/" + src.subject_id));
    for (const auto& tid : plan.target_ids)
      pairs.push_back({&src, by_id.at(tid),
                       deriveSeed(seed, src.subject_id + "->" + tid)});
  }

  std::vector<SyntheticSample> out(pairs.size());
  parallelFor(
      pairs.size(),
      [&](size_t i) {
        out[i] = augmentOne(*pairs[i].source, *pairs[i].target, opts,
                            pairs[i].seed);
      },
      opts.jobs);
  return out;
}

}  // namespace warpaug

#endif  // WARPAUG_AUGMENT_HPP
