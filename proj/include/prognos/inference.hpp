#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "prognos/backend.hpp"
#include "prognos/datamodel.hpp"
#include "prognos/retrieval.hpp"

namespace prognos::infer {

struct QuartileBoundaries {
  double q25 = 0.0;
  double q50 = 0.0;
  double q75 = 0.0;
};

/// Nearest-rank: q_p = sorted[ceil(p n) - 1]. Throws TooFewScores below 4.
QuartileBoundaries compute_quartiles(std::span<const double> scores);

/// <= q25 Low, <= q50 LowIntermediate, <= q75 HighIntermediate, else High.
RiskStratum map_risk_to_stratum(double score, const QuartileBoundaries& q);

/// Per-model boundaries over the predictions of `population` cases.
std::map<std::string, QuartileBoundaries> expert_quartiles(
    const std::vector<ExpertPrediction>& predictions, const std::set<std::string>& population);

struct ExpertStratum {
  std::string model_name;
  double risk_score = 0.0;
  RiskStratum stratum = RiskStratum::Low;
};

/// Level-1 split point in months; level-2 children are the four strata.
inline constexpr double kLevel1Split = 24.0;

/// Interval selected by y_1 (d = 1) or by (y_1, y_2) (d = 2).
Interval branch_interval(int y1);
RiskStratum leaf_stratum(int y1, int y2);

/// Everything the decision prompts condition on.
struct InferenceContext {
  std::string case_id;
  Report wsi_report;
  Report gene_report;
  std::vector<retrieval::RetrievedCase> retrieved;
  std::vector<ExpertStratum> experts;
};

/// Parses a constrained-choice answer: "1" / "2" or one of the branch's
/// interval labels ("0-24", "24+" at level 1; "0-12", "12-24", "24-36",
/// "36+" at level 2, which must lie under y_1).
std::optional<int> parse_dichotomy(std::string_view answer, int level, int y1 = 0);

/// Majority vote of the expert strata at the requested level; ties go to
/// the shorter-survival branch (1).
int expert_majority(const std::vector<ExpertStratum>& experts, int level, int y1 = 0);

struct Decision {
  int y = 1;
  bool fallback = false;
  std::string answer;  // last raw answer
};

Decision dichotomy_step(const InferenceContext& ctx, int level, int y1, AgentSession& session);

struct TimePrediction {
  double months = 0.0;
  bool clamped = false;
  bool fallback = false;
  std::string answer;
};

/// Parsed months inside `interval`: one re-prompt when outside or
/// unparseable, then clamp to [lo, hi - 0.01] or the midpoint surrogate
/// (48 for the open Low interval). Never below 0.01 months.
TimePrediction predict_time(const InferenceContext& ctx, const Interval& interval,
                            AgentSession& session);

std::optional<double> parse_months(std::string_view answer);

/// -ln(months / 12). Throws NonPositiveTime.
double risk_score(double months);

struct InferenceOptions {
  std::size_t k = 3;
  int depth = 2;  // only 2 is supported
};

/// Full inference for one test case. Throws MissingExpertPredictions when no
/// expert prediction for the case maps to a stratum. The case's own id is
/// always excluded from retrieval.
InferenceResult run_inference(const std::string& case_id, const Report& wsi_report,
                              const Report& gene_report, const retrieval::RetrievalIndex& index,
                              const std::vector<ExpertPrediction>& case_predictions,
                              const std::map<std::string, QuartileBoundaries>& quartiles,
                              AgentSession& session, const InferenceOptions& options = {});

}  // namespace prognos::infer
