#include "prognos/inference.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include <fmt/format.h>

#include "prognos/error.hpp"
#include "prognos/prompt_ids.hpp"
#include "prognos/text_parse.hpp"

namespace prognos::infer {

QuartileBoundaries compute_quartiles(std::span<const double> scores) {
  if (scores.size() < 4) {
    throw Error(ErrorCode::TooFewScores, fmt::format("{} score(s), need at least 4", scores.size()));
  }
  std::vector<double> s(scores.begin(), scores.end());
  std::sort(s.begin(), s.end());
  const auto n = static_cast<double>(s.size());
  // p is dyadic, so p * n is exact and ceil needs no tolerance.
  auto q = [&](double p) { return s[static_cast<std::size_t>(std::ceil(p * n)) - 1]; };
  return {q(0.25), q(0.50), q(0.75)};
}

RiskStratum map_risk_to_stratum(double score, const QuartileBoundaries& q) {
  if (score <= q.q25) return RiskStratum::Low;
  if (score <= q.q50) return RiskStratum::LowIntermediate;
  if (score <= q.q75) return RiskStratum::HighIntermediate;
  return RiskStratum::High;
}

std::map<std::string, QuartileBoundaries> expert_quartiles(
    const std::vector<ExpertPrediction>& predictions, const std::set<std::string>& population) {
  std::map<std::string, std::vector<double>> by_model;
  for (const auto& p : predictions) {
    if (population.count(p.case_id)) by_model[p.model_name].push_back(p.risk_score);
  }
  std::map<std::string, QuartileBoundaries> out;
  for (const auto& [model, scores] : by_model) out[model] = compute_quartiles(scores);
  return out;
}

Interval branch_interval(int y1) {
  if (y1 == 1) return {0.0, kLevel1Split};
  if (y1 == 2) return {kLevel1Split, std::numeric_limits<double>::infinity()};
  throw Error(ErrorCode::InvalidArgument, fmt::format("y1 must be 1 or 2, got {}", y1));
}

RiskStratum leaf_stratum(int y1, int y2) {
  if (y2 != 1 && y2 != 2) throw Error(ErrorCode::InvalidArgument, fmt::format("y2 must be 1 or 2, got {}", y2));
  if (y1 == 1) return y2 == 1 ? RiskStratum::High : RiskStratum::HighIntermediate;
  if (y1 == 2) return y2 == 1 ? RiskStratum::LowIntermediate : RiskStratum::Low;
  throw Error(ErrorCode::InvalidArgument, fmt::format("y1 must be 1 or 2, got {}", y1));
}

namespace {

// Which child (1 = shorter survival) an interval falls under at this level.
std::optional<int> branch_of(const Interval& iv, int level, int y1) {
  if (level == 1) {
    if (Interval{0.0, kLevel1Split}.contains(iv)) return 1;
    if (branch_interval(2).contains(iv)) return 2;
    return std::nullopt;
  }
  for (int y2 : {1, 2}) {
    if (interval_of(leaf_stratum(y1, y2)) == iv) return y2;
  }
  return std::nullopt;
}

int expert_vote(RiskStratum s, int level, int y1) {
  const Interval iv = interval_of(s);
  if (level == 1) return iv.lo < kLevel1Split ? 1 : 2;
  const Interval second = interval_of(leaf_stratum(y1, 2));
  return iv.lo < second.lo ? 1 : 2;
}

std::string options_text(int level, int y1) {
  if (level == 1) return "1: 0-24 months\n2: 24+ months\n";
  return fmt::format("1: {} months\n2: {} months\n", interval_label(interval_of(leaf_stratum(y1, 1))),
                     interval_label(interval_of(leaf_stratum(y1, 2))));
}

std::string experts_text(const std::vector<ExpertStratum>& experts) {
  std::string out;
  for (const auto& e : experts) {
    out += fmt::format("{}: risk {:.3f} -> {} ({} months)\n", e.model_name, e.risk_score,
                       to_string(e.stratum), interval_label(interval_of(e.stratum)));
  }
  return out;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string retrieved_text(const std::vector<retrieval::RetrievedCase>& cases, bool with_times) {
  std::string out;
  for (const auto& c : cases) {
    out += fmt::format("Case {} (similarity {:.3f})\n", c.case_id, c.score);
    out += "  WSI summary: " + one_line(c.wsi->summarized_report.text) + "\n";
    out += fmt::format("  WSI reasoning (risk level {}): {}\n", to_string(c.wsi->cot.risk_level),
                       one_line(c.wsi->cot.text));
    out += "  Gene summary: " + one_line(c.gene->summarized_report.text) + "\n";
    out += fmt::format("  Gene reasoning (risk level {}): {}\n", to_string(c.gene->cot.risk_level),
                       one_line(c.gene->cot.text));
    if (with_times) {
      out += fmt::format("  Observed survival: {} months ({})\n", text::format_months(c.wsi->label.time_months),
                         c.wsi->label.event ? "death" : "censored");
    }
  }
  return out.empty() ? "(none)\n" : out;
}

PromptVars base_vars(const InferenceContext& ctx, bool with_times) {
  return {{"case_id", ctx.case_id},
          {"wsi_report", ctx.wsi_report.text},
          {"gene_report", ctx.gene_report.text},
          {"retrieved", retrieved_text(ctx.retrieved, with_times)},
          {"experts", experts_text(ctx.experts)},
          {"feedback", ""}};
}

// Text after the last "answer:" label on its line, or the whole answer.
std::string answer_segment(std::string_view answer) {
  const std::string l = text::lower(answer);
  const auto pos = l.rfind("answer:");
  if (pos == std::string::npos) return std::string(answer);
  auto end = l.find('\n', pos);
  if (end == std::string::npos) end = l.size();
  return std::string(answer.substr(pos + 7, end - pos - 7));
}

}  // namespace

std::optional<int> parse_dichotomy(std::string_view answer, int level, int y1) {
  if (level != 1 && level != 2) throw Error(ErrorCode::InvalidArgument, "level must be 1 or 2");
  if (level == 2) (void)branch_interval(y1);
  const std::string seg = answer_segment(answer);

  std::set<int> picks;
  bool bad_interval = false;
  static const std::regex iv_re(R"((\d+(?:\.\d+)?)\s*(?:-|to)\s*(\d+(?:\.\d+)?)|(\d+(?:\.\d+)?)\s*\+)");
  for (auto it = std::sregex_iterator(seg.begin(), seg.end(), iv_re); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    Interval iv;
    if (m[3].matched) {
      iv = {std::stod(m[3].str()), std::numeric_limits<double>::infinity()};
    } else {
      iv = {std::stod(m[1].str()), std::stod(m[2].str())};
    }
    if (auto b = branch_of(iv, level, y1)) {
      picks.insert(*b);
    } else {
      bad_interval = true;
    }
  }
  if (picks.empty() && !bad_interval) {
    static const std::regex digit_re(R"((^|[^\w.+-])([12])([^\w.+-]|$))");
    for (auto it = std::sregex_iterator(seg.begin(), seg.end(), digit_re); it != std::sregex_iterator(); ++it) {
      picks.insert((*it)[2].str() == "1" ? 1 : 2);
    }
  }
  if (bad_interval || picks.size() != 1) return std::nullopt;
  return *picks.begin();
}

int expert_majority(const std::vector<ExpertStratum>& experts, int level, int y1) {
  int votes[3] = {0, 0, 0};
  for (const auto& e : experts) ++votes[expert_vote(e.stratum, level, y1)];
  return votes[2] > votes[1] ? 2 : 1;
}

Decision dichotomy_step(const InferenceContext& ctx, int level, int y1, AgentSession& session) {
  PromptRequest req{prompt_ids::kInferDichotomy, base_vars(ctx, false), 256, kParseTemperature,
                    fmt::format("dichotomy/{}", level)};
  req.variables["level"] = std::to_string(level);
  req.variables["options"] = options_text(level, y1);
  req.variables["previous"] =
      level == 1 ? "none" : interval_label(branch_interval(y1)) + " months";
  Decision d;
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (attempt == 1) req.variables["feedback"] = prompt_ids::kRetryFeedback;
    d.answer = session.chat_complete(req);
    if (auto y = parse_dichotomy(d.answer, level, y1)) {
      d.y = *y;
      return d;
    }
  }
  d.y = expert_majority(ctx.experts, level, y1);
  d.fallback = true;
  return d;
}

std::optional<double> parse_months(std::string_view answer) {
  static const std::regex months_re(R"(([0-9]+(?:\.[0-9]+)?)\s*months?)", std::regex::icase);
  const std::string s(answer);
  std::smatch m;
  if (std::regex_search(s, m, months_re)) return std::stod(m[1].str());
  auto v = text::first_number(answer);
  if (v && std::isfinite(*v)) return v;
  return std::nullopt;
}

TimePrediction predict_time(const InferenceContext& ctx, const Interval& interval,
                            AgentSession& session) {
  constexpr double kStep = 0.01;
  PromptRequest req{prompt_ids::kInferTime, base_vars(ctx, true), 256, kParseTemperature, "time"};
  req.variables["interval"] = interval_label(interval);
  req.variables["lo"] = text::format_months(interval.lo);
  req.variables["hi"] = interval.bounded() ? text::format_months(interval.hi) : "unbounded";

  TimePrediction t;
  std::optional<double> last;
  for (int attempt = 0; attempt < 2; ++attempt) {
    t.answer = session.chat_complete(req);
    auto v = parse_months(t.answer);
    if (v && interval.contains(*v) && *v >= kStep) {
      t.months = *v;
      return t;
    }
    if (v) last = v;
    req.variables["feedback"] =
        v ? fmt::format("Your estimate must lie within the {} months interval.", interval_label(interval))
          : prompt_ids::kRetryFeedback;
  }
  if (last) {
    t.months = std::clamp(*last, interval.lo, interval.bounded() ? interval.hi - kStep : *last);
    t.clamped = true;
  } else {
    t.months = interval.bounded() ? (interval.lo + interval.hi) / 2.0 : 48.0;
    t.fallback = true;
  }
  if (t.months < kStep) {
    t.months = kStep;
    t.clamped = true;
  }
  return t;
}

double risk_score(double months) {
  if (!(months > 0.0)) throw Error(ErrorCode::NonPositiveTime, fmt::format("months = {}", months));
  return -std::log(months / 12.0);
}

InferenceResult run_inference(const std::string& case_id, const Report& wsi_report,
                              const Report& gene_report, const retrieval::RetrievalIndex& index,
                              const std::vector<ExpertPrediction>& case_predictions,
                              const std::map<std::string, QuartileBoundaries>& quartiles,
                              AgentSession& session, const InferenceOptions& options) {
  if (options.depth != 2) throw Error(ErrorCode::InvalidArgument, "only dichotomy depth 2 is supported");
  InferenceResult r;
  r.case_id = case_id;
  r.wsi_report = wsi_report;
  r.gene_report = gene_report;

  InferenceContext ctx{case_id, wsi_report, gene_report, {}, {}};
  for (const auto& p : case_predictions) {
    if (p.case_id != case_id) continue;
    auto q = quartiles.find(p.model_name);
    if (q == quartiles.end()) {
      r.flags.push_back("expert_without_boundaries:" + p.model_name);
      continue;
    }
    ctx.experts.push_back({p.model_name, p.risk_score, map_risk_to_stratum(p.risk_score, q->second)});
  }
  if (ctx.experts.empty()) {
    throw Error(ErrorCode::MissingExpertPredictions, "no usable expert prediction for " + case_id);
  }

  ctx.retrieved = retrieval::retrieve(wsi_report, gene_report, index, session, options.k, {case_id});
  if (ctx.retrieved.size() < options.k) {
    r.flags.push_back(fmt::format("retrieved_{}_of_{}", ctx.retrieved.size(), options.k));
  }
  for (const auto& c : ctx.retrieved) r.retrieved_case_ids.push_back(c.case_id);

  const Decision d1 = dichotomy_step(ctx, 1, 0, session);
  const Decision d2 = dichotomy_step(ctx, 2, d1.y, session);
  if (d1.fallback) r.flags.push_back("dichotomy_fallback_level1");
  if (d2.fallback) r.flags.push_back("dichotomy_fallback_level2");
  r.y = {d1.y, d2.y};
  r.final_stratum = leaf_stratum(d1.y, d2.y);
  r.final_interval = interval_of(r.final_stratum);

  const TimePrediction t = predict_time(ctx, r.final_interval, session);
  if (t.clamped) r.flags.push_back("time_clamped");
  if (t.fallback) r.flags.push_back("time_fallback");
  r.predicted_months = t.months;
  r.risk_score = risk_score(t.months);

  std::string rep = fmt::format("Reasoning report for case {}\n\n", case_id);
  rep += "Retrieved cases:\n";
  for (const auto& c : ctx.retrieved) {
    rep += fmt::format("- {} (score {:.4f}; WSI {:.4f}, gene {:.4f}; stratum {})\n", c.case_id, c.score,
                       c.wsi_similarity, c.gene_similarity, to_string(c.wsi->cot.risk_level));
  }
  rep += "\nExpert strata:\n";
  for (const auto& e : ctx.experts) {
    rep += fmt::format("- {}: risk {:.4f} -> {}\n", e.model_name, e.risk_score, to_string(e.stratum));
  }
  rep += fmt::format("\nLevel 1 decision: y1 = {} ({} months){}\n", d1.y, interval_label(branch_interval(d1.y)),
                     d1.fallback ? ", expert majority fallback" : "");
  rep += "  model answer: " + one_line(text::trim(d1.answer)) + "\n";
  rep += fmt::format("Level 2 decision: y2 = {} -> {} ({} months){}\n", d2.y, to_string(r.final_stratum),
                     interval_label(r.final_interval), d2.fallback ? ", expert majority fallback" : "");
  rep += "  model answer: " + one_line(text::trim(d2.answer)) + "\n";
  rep += fmt::format("\nPredicted survival: {} months{}{}\n", text::format_months(t.months),
                     t.clamped ? " (clamped into interval)" : "", t.fallback ? " (interval surrogate)" : "");
  rep += fmt::format("Risk score: {:.4f}\n", r.risk_score);
  r.reasoning_report.text = rep;
  r.reasoning_report.source = ReportSource::Reasoning;
  r.reasoning_report.subject_id = case_id;
  r.reasoning_report.flags = r.flags;
  return r;
}

}  // namespace prognos::infer
