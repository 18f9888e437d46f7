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

/// @file subjects.hpp
/// @brief Subject records: images, demographics, covariates, and outcome.

#ifndef WARPAUG_SUBJECTS_HPP
#define WARPAUG_SUBJECTS_HPP

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "warpaug/volume.hpp"

namespace warpaug {

enum class Gender { female, male };

inline const char* genderName(Gender g) {
  return g == Gender::male ? "male" : "female";
}

/// Ordered so serialized covariate vectors are stable.
using Covariates = std::map<std::string, double>;

struct SubjectRecord {
  std::string subject_id;
  std::shared_ptr<const Volume3D> smri;
  std::shared_ptr<const Volume4D> fmri;
  double age_years = 0.0;
  Gender gender = Gender::female;
  Covariates covariates;
  double outcome_hamd_change = 0.0;  // week-8 minus baseline

  void validate() const {
    if (subject_id.empty())
      throw Error(ErrorKind::invariant, "empty subject id");
    if (!(age_years > 0))
      throw Error(ErrorKind::invariant, "non-positive age");
    if (outcome_hamd_change < -52.0 || outcome_hamd_change > 52.0)
      throw Error(ErrorKind::invariant,
                  "outcome outside the 52-point scale range");
  }
};

/// 10-year calendar bin: [20,30) -> 2, [30,40) -> 3, ...
inline int ageBin(double age_years) {
  return static_cast<int>(std::floor(age_years / 10.0));
}

inline void requireUniqueIds(const std::vector<SubjectRecord>& cohort) {
  std::map<std::string, int> seen;
  for (const auto& s : cohort)
    if (++seen[s.subject_id] > 1)
      throw Error(ErrorKind::invariant,
                  "duplicate subject id: " + s.subject_id);
}

}  // namespace warpaug

#endif  // WARPAUG_SUBJECTS_HPP
