#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "prognos/backend.hpp"
#include "prognos/cohort.hpp"
#include "prognos/config.hpp"
#include "prognos/cot_bank.hpp"
#include "prognos/gene_pipeline.hpp"
#include "prognos/survstats.hpp"

namespace prognos {
class OracleRegistry;
}

namespace prognos::run {

inline constexpr const char* kVersion = "0.3.0";

/// Both summarized reports of one case; independent of the fold.
struct CaseAnalysis {
  std::string case_id;
  Report wsi;
  Report gene;
  std::vector<std::string> warnings;
};

/// Bank (train) and query (test) membership for one fold, ids sorted.
struct FoldPlan {
  std::string name;  // "fold<i>" or "holdout"
  std::vector<std::string> train;
  std::vector<std::string> test;
};

struct BankBuild {
  FoldPlan plan;
  fs::path dir;
  std::size_t wsi_entries = 0;
  std::size_t gene_entries = 0;
  std::vector<std::string> force_accepted;  // "<case>/<modality>"
};

struct FoldResult {
  FoldPlan plan;
  std::vector<InferenceResult> results;  // test order
  std::optional<double> c_index;         // none when the fold has no comparable pair
};

struct Evaluation {
  std::vector<FoldResult> folds;
  stats::MeanStd c_index;
  std::optional<stats::LogRankResult> logrank;
  fs::path dir;
  std::vector<std::string> warnings;
};

/// Throws Error(Leakage) when any of `used` is a test case of the fold.
void assert_no_leakage(const std::vector<std::string>& used, const std::vector<std::string>& test,
                       const std::string& what);

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

/// Owns the loaded cohort, resources and model gateway for one config.
class Orchestrator {
 public:
  explicit Orchestrator(RunConfig config);
  ~Orchestrator();

  const RunConfig& config() const { return config_; }
  const Cohort& cohort() const { return cohort_; }
  const std::vector<ExpertPrediction>& experts() const { return experts_; }
  Gateway& gateway() { return *gateway_; }

  /// `fold` is "holdout" (bank = non-holdout cases, test = holdout cases) or
  /// a cross-validation fold index over all cases.
  FoldPlan plan(const std::string& fold) const;
  std::vector<FoldPlan> cv_plans() const;
  fs::path fold_dir(const FoldPlan& plan) const;

  /// Memoized per case; safe to call from several threads.
  const CaseAnalysis& analyze(const std::string& case_id);
  void analyze_all(const std::vector<std::string>& ids);

  /// Rebuilds the fold's two banks from its training cases.
  BankBuild build_bank(const FoldPlan& plan);
  /// Infers every test case against the fold's stored banks, after checking
  /// the bank manifest and bank contents against the plan.
  std::vector<InferenceResult> infer(const FoldPlan& plan, const std::vector<ExpertPrediction>& experts);
  /// All cross-validation folds plus the pooled tables under `<output>/eval`.
  Evaluation evaluate();

  /// `<output>/run_manifest.json`: command, config hash, seed, versions.
  void write_run_manifest(const std::string& command) const;

 private:
  CaseAnalysis run_analysis(const CaseRecord& rec);

  RunConfig config_;
  Cohort cohort_;
  std::vector<ExpertPrediction> experts_;
  std::vector<std::string> checklist_;
  gene::CategoryMap categories_;
  gene::GeneKnowledgeBase kb_;
  std::shared_ptr<OracleRegistry> oracle_;
  std::unique_ptr<Gateway> gateway_;

  std::mutex memo_mu_;
  std::map<std::string, std::shared_ptr<const CaseAnalysis>> memo_;
  std::map<std::string, std::shared_ptr<std::mutex>> case_locks_;
};

}  // namespace prognos::run
