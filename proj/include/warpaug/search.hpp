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

/// @file search.hpp
/// @brief Random hyperparameter search under nested cross-validation with
///        augmentation-aware training, a leakage audit, and the top-model
///        retrain protocols (ablative / additive).
///
/// Per outer fold: every config trains on each inner-training set (search A
/// additionally trains on synthetic samples whose sources are inner-training
/// subjects and whose targets avoid every held-out subject of the current
/// context), validates on real samples only, and the best config by mean
/// inner R^2 is refit on the outer-training set and tested on the outer
/// held-out fold. Searches N and A consume identical configs, weight seeds
/// and splits; the audit log records enough to re-derive every decision.

#ifndef WARPAUG_SEARCH_HPP
#define WARPAUG_SEARCH_HPP

#include <set>

#include "warpaug/augment.hpp"
#include "warpaug/mlp.hpp"
#include "warpaug/parcellation.hpp"
#include "warpaug/preprocess.hpp"
#include "warpaug/stats.hpp"

namespace warpaug {

// --- configuration sampling -------------------------------------------------

struct SearchSpace {
  int n_layers_min = 0, n_layers_max = 4;
  std::vector<int> neurons_choices{16, 32, 64, 128, 256};
  std::vector<Activation> activation_choices{
      Activation::relu, Activation::tanh, Activation::sigmoid};
  double dropout_min = 0.0, dropout_max = 0.5;
  double learning_rate_min = 1e-4, learning_rate_max = 1e-1;  // log-uniform
  std::vector<int> parcellation_k_choices{100, 200, 400};
  int epochs = 500;
  int n_configs = 300;
  uint64_t seed = 0;

  void validate() const {
    if (n_configs < 1) throw Error(ErrorKind::parameter, "n_configs >= 1");
    if (n_layers_min > n_layers_max || n_layers_min < 0)
      throw Error(ErrorKind::parameter, "layer bounds out of order");
    if (!(learning_rate_min > 0 && learning_rate_min < learning_rate_max))
      throw Error(ErrorKind::parameter, "learning-rate bounds out of order");
    if (!(dropout_min <= dropout_max && dropout_min >= 0 && dropout_max < 1))
      throw Error(ErrorKind::parameter, "dropout bounds out of order");
    if (neurons_choices.empty() || activation_choices.empty() ||
        parcellation_k_choices.empty())
      throw Error(ErrorKind::parameter, "empty choice list");
  }
};

/// Deterministic config sequence; weight seeds derive from the space seed and
/// the config index only, never from data, so searches N and A share them.
inline std::vector<ModelConfig> sampleConfigs(const SearchSpace& space) {
  space.validate();
  Rng rng(deriveSeed(space.seed, "configs"));
  std::uniform_int_distribution<int> layers(space.n_layers_min,
                                            space.n_layers_max);
  std::uniform_int_distribution<size_t> neuron(0, space.neurons_choices.size() - 1);
  std::uniform_int_distribution<size_t> activ(0,
                                              space.activation_choices.size() - 1);
  std::uniform_real_distribution<double> dropout(space.dropout_min,
                                                 space.dropout_max);
  std::uniform_real_distribution<double> log_lr(
      std::log(space.learning_rate_min), std::log(space.learning_rate_max));
  std::uniform_int_distribution<size_t> kpick(
      0, space.parcellation_k_choices.size() - 1);

  std::vector<ModelConfig> out;
  for (int i = 0; i < space.n_configs; ++i) {
    ModelConfig c;
    c.n_layers = layers(rng);
    c.neurons_per_layer = space.neurons_choices[neuron(rng)];
    c.activation = space.activation_choices[activ(rng)];
    c.dropout_rate = dropout(rng);
    c.learning_rate = std::exp(log_lr(rng));
    c.parcellation_k = space.parcellation_k_choices[kpick(rng)];
    c.epochs = space.epochs;
    c.weight_seed = deriveSeed(space.seed, strCat("weights/", i));
    c.validate();
    out.push_back(c);
  }
  return out;
}

inline uint64_t configsHash(const std::vector<ModelConfig>& configs) {
  Hasher h;
  for (const auto& c : configs) h.pod(c.contentHash());
  return h.value();
}

inline uint64_t weightSeedsHash(const std::vector<ModelConfig>& configs) {
  Hasher h;
  for (const auto& c : configs) h.pod(c.weight_seed);
  return h.value();
}

// --- nested splits ------------------------------------------------------------

struct SplitPlan {
  std::vector<std::vector<std::string>> outer_tests;  // per outer fold
  // inner_vals[o][i]: validation ids of inner fold i inside outer fold o
  std::vector<std::vector<std::vector<std::string>>> inner_vals;
  uint64_t seed = 0;

  int nOuter() const { return static_cast<int>(outer_tests.size()); }
  int nInner() const {
    return inner_vals.empty() ? 0 : static_cast<int>(inner_vals[0].size());
  }

  uint64_t hash() const {
    Hasher h;
    h.pod(seed);
    for (const auto& f : outer_tests)
      for (const auto& id : f) h.str(id).pod('|');
    for (const auto& o : inner_vals)
      for (const auto& f : o)
        for (const auto& id : f) h.str(id).pod('/');
    return h.value();
  }

  void validate(const std::vector<std::string>& cohort_ids) const {
    std::set<std::string> all(cohort_ids.begin(), cohort_ids.end());
    std::set<std::string> seen;
    for (const auto& fold : outer_tests)
      for (const auto& id : fold) {
        if (!all.count(id))
          throw Error(ErrorKind::invariant, "fold id not in cohort: " + id);
        if (!seen.insert(id).second)
          throw Error(ErrorKind::invariant, "id in two outer folds: " + id);
      }
    if (seen.size() != all.size())
      throw Error(ErrorKind::invariant, "outer folds do not cover the cohort");
    for (size_t o = 0; o < outer_tests.size(); ++o) {
      std::set<std::string> test(outer_tests[o].begin(), outer_tests[o].end());
      std::set<std::string> inner_seen;
      for (const auto& fold : inner_vals[o])
        for (const auto& id : fold) {
          if (test.count(id))
            throw Error(ErrorKind::invariant,
                        "inner fold reuses outer test id: " + id);
          if (!inner_seen.insert(id).second)
            throw Error(ErrorKind::invariant, "id in two inner folds: " + id);
        }
      if (inner_seen.size() + test.size() != all.size())
        throw Error(ErrorKind::invariant,
                    "inner folds do not cover the outer-training set");
    }
  }
};

/// Shuffled deterministic nested partition; fold sizes differ by at most 1.
inline SplitPlan buildSplits(std::vector<std::string> ids, uint64_t seed,
                             int n_outer = 3, int n_inner = 5) {
  if (static_cast<int>(ids.size()) < n_outer * n_inner)
    throw Error(ErrorKind::parameter,
                strCat("cohort too small for ", n_outer, "x", n_inner,
                       " nested folds: ", ids.size()));
  SplitPlan plan;
  plan.seed = seed;
  std::sort(ids.begin(), ids.end());
  {
    Rng rng(deriveSeed(seed, "outer"));
    std::shuffle(ids.begin(), ids.end(), rng);
  }
  plan.outer_tests.assign(n_outer, {});
  for (size_t i = 0; i < ids.size(); ++i)
    plan.outer_tests[i % n_outer].push_back(ids[i]);
  plan.inner_vals.resize(n_outer);
  for (int o = 0; o < n_outer; ++o) {
    std::set<std::string> test(plan.outer_tests[o].begin(),
                               plan.outer_tests[o].end());
    std::vector<std::string> train;
    for (const auto& id : ids)
      if (!test.count(id)) train.push_back(id);
    std::sort(train.begin(), train.end());
    Rng rng(deriveSeed(seed, strCat("inner/", o)));
    std::shuffle(train.begin(), train.end(), rng);
    plan.inner_vals[o].assign(n_inner, {});
    for (size_t i = 0; i < train.size(); ++i)
      plan.inner_vals[o][i % n_inner].push_back(train[i]);
  }
  return plan;
}

// --- search engine -----------------------------------------------------------

enum class SearchMode { without_augmentation, with_augmentation };

inline const char* searchModeName(SearchMode m) {
  return m == SearchMode::with_augmentation ? "A" : "N";
}

struct TrainStep {
  int outer = 0;
  int inner = -1;  // -1: outer-level refit
  int config_index = 0;
  std::vector<std::string> train_real;
  std::vector<std::array<std::string, 3>> synthetic;  // id, source, target
  std::vector<std::string> eval_ids;                  // real subjects only
  double r2 = 0.0;
  double rmse = 0.0;
  int n = 0;
};

struct SearchResult {
  SearchMode mode = SearchMode::without_augmentation;
  int factor = 0;
  uint64_t configs_hash = 0, splits_hash = 0, weight_seeds_hash = 0;
  std::vector<std::vector<double>> inner_mean_r2;  // [outer][config]
  std::vector<int> selected_config;                // per outer fold
  std::vector<EvalResult> outer_eval;              // per outer fold
  double mean_test_r2 = 0.0, mean_test_rmse = 0.0;
  std::vector<TrainStep> audit;

  /// Hash of everything the search computed; the mode label itself is
  /// excluded so a factor-0 search A hashes identically to search N.
  uint64_t contentHash() const {
    Hasher h;
    h.pod(factor).pod(configs_hash);
    h.pod(splits_hash).pod(weight_seeds_hash);
    for (const auto& per : inner_mean_r2) h.vec(per);
    h.vec(selected_config);
    for (const auto& e : outer_eval) h.pod(e.r2).pod(e.rmse).pod(e.n);
    h.pod(mean_test_r2).pod(mean_test_rmse);
    for (const auto& s : audit) {
      h.pod(s.outer).pod(s.inner).pod(s.config_index);
      for (const auto& id : s.train_real) h.str(id).pod(';');
      for (const auto& t : s.synthetic) h.str(t[0]).str(t[1]).str(t[2]);
      for (const auto& id : s.eval_ids) h.str(id).pod(',');
      h.pod(s.r2).pod(s.rmse).pod(s.n);
    }
    return h.value();
  }
};

/// Throws when any training step used a synthetic sample whose source or
/// target belongs to that step's evaluation set, or when the recorded
/// selections disagree with the audited inner means.
inline void auditSearchResult(const SearchResult& result) {
  for (const auto& step : result.audit) {
    std::set<std::string> eval(step.eval_ids.begin(), step.eval_ids.end());
    for (const auto& syn : step.synthetic) {
      if (eval.count(syn[1]) || eval.count(syn[2]))
        throw Error(ErrorKind::leakage,
                    strCat("synthetic sample ", syn[0],
                           " leaks into evaluation at outer ", step.outer,
                           " inner ", step.inner));
      if (eval.count(syn[0]))
        throw Error(ErrorKind::leakage,
                    strCat("synthetic id evaluated: ", syn[0]));
    }
  }
  for (size_t o = 0; o < result.selected_config.size(); ++o) {
    const auto& means = result.inner_mean_r2[o];
    int best = 0;
    for (size_t c = 1; c < means.size(); ++c)
      if (means[c] > means[best]) best = static_cast<int>(c);
    if (best != result.selected_config[o])
      throw Error(ErrorKind::invariant,
                  strCat("selection mismatch at outer fold ", o));
  }
}

struct ExperimentSetup {
  std::vector<SubjectRecord> cohort;
  std::vector<SubjectRecord> pool;  // target candidates for augmentation
  TaskDesign task;
  PreprocessConfig preprocess;      // template_epi must be set
  AugmentOptions aug_options = fastAugmentOptions();
  int factor = 5;
  uint64_t aug_seed = 0;
  double parc_threshold = 0.5;
  uint64_t parc_seed = 0;
  bool parcellation_from_all_subjects = false;
  unsigned jobs = 0;
};

struct RetrainRow {
  int outer = 0;
  int config_index = 0;
  std::vector<double> before_r2, after_r2;
  std::vector<double> before_rmse, after_rmse;

  double meanBeforeR2() const {
    double s = 0;
    for (double v : before_r2) s += v;
    return s / before_r2.size();
  }
  double meanAfterR2() const {
    double s = 0;
    for (double v : after_r2) s += v;
    return s / after_r2.size();
  }
  double meanBeforeRmse() const {
    double s = 0;
    for (double v : before_rmse) s += v;
    return s / before_rmse.size();
  }
  double meanAfterRmse() const {
    double s = 0;
    for (double v : after_rmse) s += v;
    return s / after_rmse.size();
  }
};

struct RetrainResult {
  bool retrained_with_augmentation = false;
  std::vector<RetrainRow> rows;
  double mean_delta_r2 = 0.0;    // after - before
  double mean_delta_rmse = 0.0;
  TTestResult r2_ttest, rmse_ttest;  // paired across rows
};

/// Caches everything expensive across searches and retrains: augmentation
/// warps by (source, target), preprocessed runs and contrast maps per sample,
/// parcellations per (outer fold, k).
class SearchEngine {
 public:
  explicit SearchEngine(ExperimentSetup setup) : setup_(std::move(setup)) {
    if (!setup_.preprocess.template_epi)
      throw Error(ErrorKind::config, "experiment setup needs a template");
    requireUniqueIds(setup_.cohort);
    for (const auto& s : setup_.cohort) by_id_[s.subject_id] = &s;
    for (const auto& s : setup_.pool)
      if (!by_id_.count(s.subject_id)) by_id_[s.subject_id] = &s;
    design_ = buildDesign(setup_.task);
  }

  const ExperimentSetup& setup() const { return setup_; }

  SearchResult run(const std::vector<ModelConfig>& configs,
                   const SplitPlan& splits, SearchMode mode) {
    std::vector<std::string> cohort_ids;
    for (const auto& s : setup_.cohort) cohort_ids.push_back(s.subject_id);
    splits.validate(cohort_ids);
    registerSplits(splits);

    SearchResult result;
    result.mode = mode;
    result.factor =
        mode == SearchMode::with_augmentation ? setup_.factor : 0;
    result.configs_hash = configsHash(configs);
    result.splits_hash = splits.hash();
    result.weight_seeds_hash = weightSeedsHash(configs);

    const int n_outer = splits.nOuter();
    result.inner_mean_r2.assign(n_outer,
                                std::vector<double>(configs.size(), 0.0));

    for (int o = 0; o < n_outer; ++o) {
      std::set<std::string> outer_test(splits.outer_tests[o].begin(),
                                       splits.outer_tests[o].end());
      std::vector<std::string> outer_train;
      for (const auto& id : cohort_ids)
        if (!outer_test.count(id)) outer_train.push_back(id);

      std::vector<std::vector<double>> inner_r2(
          configs.size(), std::vector<double>());
      for (int i = 0; i < splits.nInner(); ++i) {
        const auto& val_ids = splits.inner_vals[o][i];
        std::set<std::string> held(outer_test);
        held.insert(val_ids.begin(), val_ids.end());
        std::vector<std::string> train_ids;
        for (const auto& id : outer_train)
          if (!held.count(id)) train_ids.push_back(id);

        std::vector<SyntheticSample> synths;
        if (mode == SearchMode::with_augmentation && setup_.factor > 0)
          synths = syntheticFor(train_ids, held);
        prefetch(train_ids, val_ids, synths);

        for (size_t c = 0; c < configs.size(); ++c) {
          TrainStep step = trainEval(configs[c], static_cast<int>(c), o, i,
                                     train_ids, synths, val_ids);
          inner_r2[c].push_back(step.r2);
          result.audit.push_back(std::move(step));
        }
      }
      int best = 0;
      for (size_t c = 0; c < configs.size(); ++c) {
        double mean = 0;
        for (double v : inner_r2[c]) mean += v;
        mean /= inner_r2[c].size();
        result.inner_mean_r2[o][c] = mean;
        if (mean > result.inner_mean_r2[o][best])
          best = static_cast<int>(c);  // ties keep the lowest index
      }
      result.selected_config.push_back(best);

      // refit the selected config on the full outer-training set
      std::vector<SyntheticSample> synths;
      if (mode == SearchMode::with_augmentation && setup_.factor > 0)
        synths = syntheticFor(outer_train, outer_test);
      prefetch(outer_train, splits.outer_tests[o], synths);
      TrainStep step = trainEval(configs[best], best, o, -1, outer_train,
                                 synths, splits.outer_tests[o]);
      result.outer_eval.push_back({step.r2, step.rmse, step.n});
      result.audit.push_back(std::move(step));
    }
    for (const auto& e : result.outer_eval) {
      result.mean_test_r2 += e.r2 / result.outer_eval.size();
      result.mean_test_rmse += e.rmse / result.outer_eval.size();
    }
    auditSearchResult(result);
    return result;
  }

  /// Retrains the top models of each outer fold with the augmentation setting
  /// optionally flipped; `before` keeps the original setting. Rows stay
  /// paired per weight-repeat seed.
  RetrainResult retrainTopModels(const SearchResult& result,
                                 const std::vector<ModelConfig>& configs,
                                 const SplitPlan& splits, int top_n,
                                 bool flip_augmentation, int n_repeats) {
    if (n_repeats < 1)
      throw Error(ErrorKind::parameter, "need at least one repeat");
    bool orig_aug = result.mode == SearchMode::with_augmentation &&
                    result.factor > 0;
    bool new_aug = flip_augmentation ? !orig_aug : orig_aug;
    registerSplits(splits);

    RetrainResult out;
    out.retrained_with_augmentation = new_aug;
    std::vector<std::string> cohort_ids;
    for (const auto& s : setup_.cohort) cohort_ids.push_back(s.subject_id);

    for (int o = 0; o < splits.nOuter(); ++o) {
      // rank configs by recorded inner mean; ties to the lowest index
      std::vector<int> order(configs.size());
      std::iota(order.begin(), order.end(), 0);
      const auto& means = result.inner_mean_r2[o];
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return means[a] > means[b];
      });
      if (static_cast<int>(order.size()) < top_n)
        throw Error(ErrorKind::parameter, "fewer configs than top_n");

      std::set<std::string> outer_test(splits.outer_tests[o].begin(),
                                       splits.outer_tests[o].end());
      std::vector<std::string> outer_train;
      for (const auto& id : cohort_ids)
        if (!outer_test.count(id)) outer_train.push_back(id);
      std::vector<SyntheticSample> synths_orig, synths_new;
      if (orig_aug) synths_orig = syntheticFor(outer_train, outer_test);
      if (new_aug) synths_new = syntheticFor(outer_train, outer_test);
      prefetch(outer_train, splits.outer_tests[o], synths_orig);
      prefetch({}, {}, synths_new);

      for (int rank = 0; rank < top_n; ++rank) {
        int c = order[rank];
        RetrainRow row;
        row.outer = o;
        row.config_index = c;
        for (int rep = 0; rep < n_repeats; ++rep) {
          ModelConfig cfg = configs[c];
          cfg.weight_seed = deriveSeed(cfg.weight_seed, strCat("rep/", rep));
          TrainStep before = trainEval(cfg, c, o, -1, outer_train, synths_orig,
                                       splits.outer_tests[o]);
          TrainStep after = trainEval(cfg, c, o, -1, outer_train, synths_new,
                                      splits.outer_tests[o]);
          row.before_r2.push_back(before.r2);
          row.after_r2.push_back(after.r2);
          row.before_rmse.push_back(before.rmse);
          row.after_rmse.push_back(after.rmse);
        }
        out.rows.push_back(std::move(row));
      }
    }
    std::vector<double> before_r2, after_r2, before_rmse, after_rmse;
    for (const auto& row : out.rows) {
      before_r2.push_back(row.meanBeforeR2());
      after_r2.push_back(row.meanAfterR2());
      before_rmse.push_back(row.meanBeforeRmse());
      after_rmse.push_back(row.meanAfterRmse());
      out.mean_delta_r2 += (after_r2.back() - before_r2.back()) /
                           static_cast<double>(out.rows.size());
      out.mean_delta_rmse += (after_rmse.back() - before_rmse.back()) /
                             static_cast<double>(out.rows.size());
    }
    out.r2_ttest = pairedTTest(after_r2, before_r2);
    out.rmse_ttest = pairedTTest(after_rmse, before_rmse);
    return out;
  }

  size_t augmentationCacheSize() const { return aug_cache_.size(); }

 private:
  struct SampleData {
    std::vector<ContrastMap> contrasts;
    std::shared_ptr<const Volume4D> normalized;  // kept for real subjects only
  };

  const SubjectRecord& record(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end())
      throw Error(ErrorKind::lookup, "unknown subject: " + id);
    return *it->second;
  }

  /// Matched-target synthetic samples for a training set; the target pool
  /// drops every excluded (held-out) subject and the leakage precondition is
  /// asserted inside augmentCohort's pool filter.
  std::vector<SyntheticSample> syntheticFor(
      const std::vector<std::string>& train_ids,
      const std::set<std::string>& excluded) {
    std::vector<SubjectRecord> pool;
    for (const auto& s : setup_.pool)
      if (!excluded.count(s.subject_id)) pool.push_back(s);
    std::map<std::string, const SubjectRecord*> pool_by_id;
    for (const auto& p : pool) pool_by_id[p.subject_id] = &p;

    struct PairJob {
      const SubjectRecord* source;
      const SubjectRecord* target;
      uint64_t seed;
    };
    std::vector<PairJob> jobs;
    for (const auto& sid : train_ids) {
      const SubjectRecord& src = record(sid);
      AugmentationPlan plan =
          selectTargets(src, pool, setup_.factor,
                        deriveSeed(setup_.aug_seed, "plan/" + sid));
      for (const auto& tid : plan.target_ids)
        jobs.push_back({&src, pool_by_id.at(tid),
                        deriveSeed(setup_.aug_seed, sid + "->" + tid)});
    }
    std::vector<SyntheticSample> out(jobs.size());
    parallelFor(
        jobs.size(),
        [&](size_t i) {
          const PairJob& job = jobs[i];
          auto key = AugmentationCache::Key{job.source->subject_id,
                                            job.target->subject_id};
          auto fmri = aug_cache_.getOrCompute(key, [&]() {
            return augmentOne(*job.source, *job.target, setup_.aug_options,
                              job.seed)
                .fmri;
          });
          SyntheticSample s;
          s.synthetic_id =
              syntheticId(job.source->subject_id, job.target->subject_id);
          s.fmri = fmri;
          s.source_id = job.source->subject_id;
          s.target_id = job.target->subject_id;
          s.covariates = job.source->covariates;
          s.outcome_hamd_change = job.source->outcome_hamd_change;
          s.age_years = job.source->age_years;
          s.gender = job.source->gender;
          s.seed = job.seed;
          out[i] = std::move(s);
        },
        setup_.jobs);
    return out;
  }

  /// Preprocess + GLM for every sample that is not cached yet, in parallel.
  void prefetch(const std::vector<std::string>& train_ids,
                const std::vector<std::string>& eval_ids,
                const std::vector<SyntheticSample>& synths) {
    std::vector<std::string> need_real;
    for (const auto& id : train_ids)
      if (!real_cache_.count(id)) need_real.push_back(id);
    for (const auto& id : eval_ids)
      if (!real_cache_.count(id) &&
          std::find(need_real.begin(), need_real.end(), id) ==
              need_real.end())
        need_real.push_back(id);
    std::vector<SampleData> real_out(need_real.size());
    parallelFor(
        need_real.size(),
        [&](size_t i) { real_out[i] = process(*record(need_real[i]).fmri, true); },
        setup_.jobs);
    for (size_t i = 0; i < need_real.size(); ++i)
      real_cache_.emplace(need_real[i], std::move(real_out[i]));

    std::vector<const SyntheticSample*> need_syn;
    for (const auto& s : synths)
      if (!synth_cache_.count(s.synthetic_id)) need_syn.push_back(&s);
    std::vector<SampleData> syn_out(need_syn.size());
    parallelFor(
        need_syn.size(),
        [&](size_t i) { syn_out[i] = process(*need_syn[i]->fmri, false); },
        setup_.jobs);
    for (size_t i = 0; i < need_syn.size(); ++i)
      synth_cache_.emplace(need_syn[i]->synthetic_id, std::move(syn_out[i]));
  }

  SampleData process(const Volume4D& fmri, bool keep_normalized) {
    PreprocessResult pre = preprocessPipeline(fmri, setup_.preprocess);
    if (stage_manifest_.empty()) stage_manifest_ = pre.stages;
    if (pre.stages != stage_manifest_)
      throw Error(ErrorKind::invariant,
                  "preprocessing stages diverged between samples");
    SampleData out;
    GlmResult glm = fitGlm(pre.fmri, design_);
    out.contrasts = std::move(glm.contrasts);
    if (keep_normalized)
      out.normalized = std::make_shared<Volume4D>(std::move(pre.fmri));
    return out;
  }

  /// Parcellation for (outer fold, k) built from training-fold subjects by
  /// default (flag switches to every cohort subject, mirroring group atlases
  /// built before the split).
  const Parcellation& parcellation(int outer,
                                   const std::vector<std::string>& outer_train,
                                   int k) {
    auto key = std::make_pair(outer, k);
    auto it = parc_cache_.find(key);
    if (it != parc_cache_.end()) return it->second;
    std::vector<std::string> source_ids = outer_train;
    if (setup_.parcellation_from_all_subjects) {
      source_ids.clear();
      for (const auto& s : setup_.cohort) source_ids.push_back(s.subject_id);
    }
    // mask: template brain; runs: preprocessed training subjects
    if (!template_mask_) {
      template_mask_ = std::make_unique<BinaryMask>(
          extractBrain(*setup_.preprocess.template_epi,
                       setup_.preprocess.fmri_mask));
    }
    std::vector<const Volume4D*> runs;
    for (const auto& id : source_ids) {
      auto rit = real_cache_.find(id);
      if (rit == real_cache_.end() || !rit->second.normalized)
        throw Error(ErrorKind::dependency,
                    "normalized run missing for parcellation: " + id);
      runs.push_back(rit->second.normalized.get());
    }
    Parcellation parc = buildParcellation(
        runs, *template_mask_, k,
        deriveSeed(setup_.parc_seed, strCat("parc/", outer, "/", k)),
        setup_.parc_threshold);
    parc.subject_ids = source_ids;
    return parc_cache_.emplace(key, std::move(parc)).first->second;
  }

  FeatureVector features(const std::string& sample_id,
                         const Parcellation& parc) {
    const SampleData& data = real_cache_.at(sample_id);
    const SubjectRecord& rec = record(sample_id);
    return extractFeatures(data.contrasts, parc, rec.covariates,
                           rec.outcome_hamd_change);
  }

  FeatureVector featuresForSynth(const SyntheticSample& s,
                                 const Parcellation& parc) {
    const SampleData& data = synth_cache_.at(s.synthetic_id);
    return extractFeatures(data.contrasts, parc, s.covariates,
                           s.outcome_hamd_change);
  }

  TrainStep trainEval(const ModelConfig& config, int config_index, int outer,
                      int inner, const std::vector<std::string>& train_ids,
                      const std::vector<SyntheticSample>& synths,
                      const std::vector<std::string>& eval_ids) {
    const Parcellation& parc =
        parcellation(outer, outerTrainIds(outer), config.parcellation_k);

    std::vector<std::vector<double>> x_rows;
    std::vector<double> y_rows;
    for (const auto& id : train_ids) {
      FeatureVector f = features(id, parc);
      x_rows.push_back(f.input());
      y_rows.push_back(f.outcome);
    }
    for (const auto& s : synths) {
      FeatureVector f = featuresForSynth(s, parc);
      x_rows.push_back(f.input());
      y_rows.push_back(f.outcome);
    }
    Eigen::MatrixXd x(x_rows.size(), x_rows[0].size());
    Eigen::VectorXd y(x_rows.size());
    for (size_t r = 0; r < x_rows.size(); ++r) {
      for (size_t c = 0; c < x_rows[r].size(); ++c) x(r, c) = x_rows[r][c];
      y[r] = y_rows[r];
    }
    TrainedModel model = trainModel(x, y, config);

    Eigen::MatrixXd xe(eval_ids.size(), x.cols());
    Eigen::VectorXd ye(eval_ids.size());
    for (size_t r = 0; r < eval_ids.size(); ++r) {
      FeatureVector f = features(eval_ids[r], parc);
      auto row = f.input();
      for (size_t c = 0; c < row.size(); ++c) xe(r, c) = row[c];
      ye[r] = f.outcome;
    }
    EvalResult eval = evaluate(model, xe, ye);

    TrainStep step;
    step.outer = outer;
    step.inner = inner;
    step.config_index = config_index;
    step.train_real = train_ids;
    for (const auto& s : synths)
      step.synthetic.push_back({s.synthetic_id, s.source_id, s.target_id});
    step.eval_ids = eval_ids;
    step.r2 = eval.r2;
    step.rmse = eval.rmse;
    step.n = eval.n;
    return step;
  }

  std::vector<std::string> outerTrainIds(int outer) const {
    auto it = outer_train_ids_.find(outer);
    if (it != outer_train_ids_.end()) return it->second;
    throw Error(ErrorKind::invariant, "outer-training ids not registered");
  }

 public:
  /// The engine needs the split to resolve outer-training sets for
  /// parcellation provenance; run() registers them automatically, while
  /// direct trainEval-style use (retrains) reuses the registration.
  void registerSplits(const SplitPlan& splits) {
    outer_train_ids_.clear();
    std::vector<std::string> cohort_ids;
    for (const auto& s : setup_.cohort) cohort_ids.push_back(s.subject_id);
    for (int o = 0; o < splits.nOuter(); ++o) {
      std::set<std::string> test(splits.outer_tests[o].begin(),
                                 splits.outer_tests[o].end());
      std::vector<std::string> train;
      for (const auto& id : cohort_ids)
        if (!test.count(id)) train.push_back(id);
      outer_train_ids_[o] = train;
    }
  }

 private:
  ExperimentSetup setup_;
  std::map<std::string, const SubjectRecord*> by_id_;
  DesignMatrix design_;
  AugmentationCache aug_cache_;
  std::map<std::string, SampleData> real_cache_;
  std::map<std::string, SampleData> synth_cache_;
  std::map<std::pair<int, int>, Parcellation> parc_cache_;
  std::map<int, std::vector<std::string>> outer_train_ids_;
  std::unique_ptr<BinaryMask> template_mask_;
  std::vector<std::string> stage_manifest_;
};

}  // namespace warpaug

#endif  // WARPAUG_SEARCH_HPP
