#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "prognos/datamodel.hpp"

namespace prognos {

/// cohort.json:
///   {"name": "...", "time_unit": "months" | "days",
///    "cases": [{"case_id", "slide_manifest", "gene_profile",
///               "label": {"time", "event"}, "holdout": false}]}
/// Paths are relative to the cohort file. `label.time_months` is accepted in
/// place of `label.time`; times are converted to months on load.
struct Cohort {
  std::string name;
  fs::path file;
  std::vector<CaseRecord> cases;

  const CaseRecord* find(const std::string& case_id) const;
  /// Case ids in file order; `holdout` selects the held-out or the bank cases.
  std::vector<std::string> ids(bool holdout) const;
  std::vector<std::string> all_ids() const;
};

Cohort load_cohort(const fs::path& path);
/// Writes months and paths relative to the file's directory.
void save_cohort(const Cohort& cohort, const fs::path& path);

/// CSV `case_id,model_name,risk_score` with a header row.
std::vector<ExpertPrediction> load_experts(const fs::path& path);
void save_experts(const std::vector<ExpertPrediction>& predictions, const fs::path& path);

std::vector<ExpertPrediction> predictions_for(const std::vector<ExpertPrediction>& all,
                                              const std::string& case_id);

}  // namespace prognos
