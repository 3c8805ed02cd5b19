#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "prognos/error.hpp"
#include "prognos/inference.hpp"
#include "prognos/prompt_ids.hpp"
#include "prognos/survstats.hpp"
#include "support.hpp"

using namespace prognos;
using namespace prognos::testing;
using namespace prognos::infer;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidArgument;
}

InferenceContext ctx_with(std::vector<RiskStratum> strata) {
  InferenceContext c;
  c.case_id = "t1";
  c.wsi_report = {"wsi", ReportSource::WsiSummary, "t1", std::nullopt, {}};
  c.gene_report = {"gene", ReportSource::GeneSummary, "t1", std::nullopt, {}};
  int i = 0;
  for (auto s : strata) c.experts.push_back({"M" + std::to_string(i++), 0.0, s});
  return c;
}

// Bank of `ids` with embeddings from the scripted session's embedder.
retrieval::RetrievalIndex small_index(Scripted& m, const std::vector<std::string>& ids) {
  std::vector<BankEntry> w, g;
  for (const auto& id : ids) {
    for (auto mod : {Modality::Wsi, Modality::Gene}) {
      BankEntry e;
      e.case_id = id;
      e.modality = mod;
      e.summarized_report.text = "summary of " + id;
      e.label = {30.0, true};
      e.cot.risk_level = RiskStratum::LowIntermediate;
      e.report_embedding = m.s().embed_text(e.summarized_report.text);
      (mod == Modality::Wsi ? w : g).push_back(e);
    }
  }
  return retrieval::build_index(w, g);
}

}  // namespace

TEST_CASE("nearest-rank quartiles") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6, 7, 8};
  auto q = compute_quartiles(a);
  CHECK(q.q25 == 2);
  CHECK(q.q50 == 4);
  CHECK(q.q75 == 6);
  q = compute_quartiles(std::vector<double>{5, 5, 5, 5});
  CHECK((q.q25 == 5 && q.q50 == 5 && q.q75 == 5));
  q = compute_quartiles(std::vector<double>{3, 1, 2, 4});
  CHECK((q.q25 == 1 && q.q50 == 2 && q.q75 == 3));
  CHECK(code_of([] { compute_quartiles(std::vector<double>{1, 2, 3}); }) == ErrorCode::TooFewScores);
}

TEST_CASE("score to stratum mapping closes each boundary from above") {
  const QuartileBoundaries q{2, 4, 6};
  CHECK(map_risk_to_stratum(5, q) == RiskStratum::HighIntermediate);
  CHECK(map_risk_to_stratum(9, q) == RiskStratum::High);
  CHECK(map_risk_to_stratum(2, q) == RiskStratum::Low);
  CHECK(map_risk_to_stratum(4, q) == RiskStratum::LowIntermediate);
  CHECK(map_risk_to_stratum(6, q) == RiskStratum::HighIntermediate);
  CHECK(map_risk_to_stratum(5, {5, 5, 5}) == RiskStratum::Low);
}

TEST_CASE("strata are invariant under strictly increasing transforms") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  const std::vector<std::function<double(double)>> maps{
      [](double x) { return 3.0 * x - 7.0; }, [](double x) { return std::exp(x); },
      [](double x) { return x * x * x; }, [](double x) { return std::atan(x); },
      [](double x) { return x + std::sinh(x); }};
  for (int t = 0; t < 200; ++t) {
    std::vector<double> pop(4 + rng() % 40);
    for (auto& x : pop) x = std::round(n(rng) * 4) / 4;  // quarter steps create ties
    const double s = rng() % 3 == 0 ? pop[rng() % pop.size()] : n(rng);
    const auto& f = maps[rng() % maps.size()];
    std::vector<double> fpop;
    for (double x : pop) fpop.push_back(f(x));
    CHECK(map_risk_to_stratum(s, compute_quartiles(pop)) == map_risk_to_stratum(f(s), compute_quartiles(fpop)));
  }
}

TEST_CASE("expert quartiles use only the population") {
  std::vector<ExpertPrediction> p;
  for (int i = 1; i <= 8; ++i) p.push_back({"c" + std::to_string(i), "MCAT", double(i)});
  p.push_back({"test", "MCAT", 100.0});
  const auto q = expert_quartiles(p, {"c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8"});
  REQUIRE(q.count("MCAT") == 1);
  CHECK(q.at("MCAT").q75 == 6);
}

TEST_CASE("dichotomy tree") {
  CHECK(branch_interval(1) == Interval{0, 24});
  CHECK_FALSE(branch_interval(2).bounded());
  CHECK(leaf_stratum(1, 1) == RiskStratum::High);
  CHECK(leaf_stratum(1, 2) == RiskStratum::HighIntermediate);
  CHECK(leaf_stratum(2, 1) == RiskStratum::LowIntermediate);
  CHECK(leaf_stratum(2, 2) == RiskStratum::Low);
  for (int y1 : {1, 2})
    for (int y2 : {1, 2}) CHECK(branch_interval(y1).contains(interval_of(leaf_stratum(y1, y2))));
}

TEST_CASE("dichotomy answers parse as constrained choices") {
  CHECK(parse_dichotomy("1", 1) == 1);
  CHECK(parse_dichotomy("Answer: 2", 1) == 2);
  CHECK(parse_dichotomy("0-24", 1) == 1);
  CHECK(parse_dichotomy("24+", 1) == 2);
  CHECK(parse_dichotomy("36+", 2, 2) == 2);
  CHECK(parse_dichotomy("24-36", 2, 2) == 1);
  CHECK(parse_dichotomy("12-24", 2, 1) == 2);
  CHECK_FALSE(parse_dichotomy("0-12", 2, 2).has_value());
  CHECK_FALSE(parse_dichotomy("maybe", 1).has_value());
}

TEST_CASE("dichotomy falls back to the expert majority") {
  using R = RiskStratum;
  CHECK(expert_majority(ctx_with({R::High, R::High, R::Low}).experts, 1) == 1);
  CHECK(expert_majority(ctx_with({R::Low, R::LowIntermediate, R::High}).experts, 1) == 2);
  CHECK(expert_majority(ctx_with({R::High, R::Low}).experts, 1) == 1);  // tie goes short
  CHECK(expert_majority(ctx_with({R::Low, R::Low, R::LowIntermediate}).experts, 2, 2) == 2);

  Scripted m;
  m.transport->push(prompt_ids::kInferDichotomy, "1");
  auto d = dichotomy_step(ctx_with({R::Low}), 1, 0, m.s());
  CHECK(d.y == 1);
  CHECK_FALSE(d.fallback);

  d = dichotomy_step(ctx_with({R::High, R::High, R::Low}), 1, 0, m.s());
  CHECK(d.y == 1);
  CHECK(d.fallback);
  CHECK(m.transport->count(prompt_ids::kInferDichotomy) == 3);

  m.transport->push(prompt_ids::kInferDichotomy, "36+");
  d = dichotomy_step(ctx_with({R::High}), 2, 2, m.s());
  CHECK(leaf_stratum(2, d.y) == R::Low);
}

TEST_CASE("exact time prediction") {
  Scripted m;
  const auto ctx = ctx_with({RiskStratum::High});
  m.transport->push(prompt_ids::kInferTime, "6.25");
  auto t = predict_time(ctx, interval_of(RiskStratum::High), m.s());
  CHECK(t.months == 6.25);
  CHECK_FALSE(t.clamped);

  m.transport->push(prompt_ids::kInferTime, "30");
  m.transport->push(prompt_ids::kInferTime, "30");
  t = predict_time(ctx, interval_of(RiskStratum::HighIntermediate), m.s());
  CHECK(t.months == doctest::Approx(23.99));
  CHECK(t.clamped);

  m.transport->push(prompt_ids::kInferTime, "30");
  m.transport->push(prompt_ids::kInferTime, "Predicted survival: 18.5 months");
  t = predict_time(ctx, interval_of(RiskStratum::HighIntermediate), m.s());
  CHECK(t.months == 18.5);
  CHECK_FALSE(t.clamped);

  t = predict_time(ctx, interval_of(RiskStratum::Low), m.s());
  CHECK(t.months == 48.0);
  CHECK(t.fallback);
  t = predict_time(ctx, interval_of(RiskStratum::LowIntermediate), m.s());
  CHECK(t.months == 30.0);

  m.transport->push(prompt_ids::kInferTime, "0");
  m.transport->push(prompt_ids::kInferTime, "-3");
  t = predict_time(ctx, interval_of(RiskStratum::High), m.s());
  CHECK(t.months >= 0.01);
  CHECK(interval_of(RiskStratum::High).contains(t.months));
}

TEST_CASE("risk score") {
  CHECK(risk_score(12) == 0.0);
  CHECK(risk_score(6.25) == doctest::Approx(0.652).epsilon(1e-3));
  CHECK(risk_score(3) > risk_score(4));
  CHECK(code_of([] { risk_score(0); }) == ErrorCode::NonPositiveTime);

  std::mt19937_64 rng(8);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> months, risk, neg;
    std::vector<SurvivalLabel> y;
    for (int i = 0; i < 12; ++i) {
      months.push_back(0.01 * double(1 + rng() % 6000));
      risk.push_back(risk_score(months.back()));
      neg.push_back(-months.back());
      y.push_back({double(1 + rng() % 60), rng() % 3 != 0});
    }
    try {
      CHECK(stats::c_index(risk, y) == stats::c_index(neg, y));
    } catch (const Error&) {
    }
  }
}

TEST_CASE("run_inference end to end with scripted answers") {
  Scripted m(32);
  const auto idx = small_index(m, {"a", "b", "t1"});
  const std::map<std::string, QuartileBoundaries> q{{"MCAT", {-1, 0, 1}}, {"CCL", {-1, 0, 1}}};
  const std::vector<ExpertPrediction> preds{{"t1", "MCAT", 2.0}, {"t1", "CCL", 1.5}, {"t1", "GHOST", 0.0}};
  const Report w{"summary of t1", ReportSource::WsiSummary, "t1", std::nullopt, {}};
  const Report g{"summary of t1", ReportSource::GeneSummary, "t1", std::nullopt, {}};

  m.transport->push(prompt_ids::kInferDichotomy, "1");
  m.transport->push(prompt_ids::kInferDichotomy, "0-12");
  m.transport->push(prompt_ids::kInferTime, "6.25");
  const auto r = run_inference("t1", w, g, idx, preds, q, m.s());
  CHECK(r.y == std::vector<int>{1, 1});
  CHECK(r.final_stratum == RiskStratum::High);
  CHECK(r.predicted_months == 6.25);
  CHECK(r.risk_score == doctest::Approx(0.652).epsilon(1e-3));
  // Its own bank row is never retrieved; two remain for K = 3.
  CHECK(std::set<std::string>(r.retrieved_case_ids.begin(), r.retrieved_case_ids.end()) ==
        std::set<std::string>{"a", "b"});
  CHECK(std::find(r.flags.begin(), r.flags.end(), "retrieved_2_of_3") != r.flags.end());
  CHECK(std::find(r.flags.begin(), r.flags.end(), "expert_without_boundaries:GHOST") != r.flags.end());
  CHECK(r.reasoning_report.text.find("t1") != std::string::npos);

  CHECK(code_of([&] { run_inference("t1", w, g, idx, {}, q, m.s()); }) == ErrorCode::MissingExpertPredictions);
}

TEST_CASE("fallback chain is total and interval-consistent under arbitrary answers") {
  std::mt19937_64 rng(31);
  const std::vector<std::string> answers{"1", "2", "0-24", "24+", "0-12", "12-24", "24-36", "36+", "",
                                         "banana", "5", "18.5", "30", "72", "-4", "1e9", "nan", "2 or 1"};
  Scripted m(16);
  const auto idx = small_index(m, {"a", "b", "c", "d"});
  const std::map<std::string, QuartileBoundaries> q{{"M", {-1, 0, 1}}};
  for (int t = 0; t < 100; ++t) {
    for (int k = 0; k < 6; ++k) {
      m.transport->push(prompt_ids::kInferDichotomy, answers[rng() % answers.size()]);
      m.transport->push(prompt_ids::kInferTime, answers[rng() % answers.size()]);
    }
    const std::vector<ExpertPrediction> preds{{"t", "M", std::normal_distribution<double>(0, 2)(rng)}};
    const Report w{"w", ReportSource::WsiSummary, "t", std::nullopt, {}};
    const Report g{"g", ReportSource::GeneSummary, "t", std::nullopt, {}};
    InferenceResult r;
    try {
      r = run_inference("t", w, g, idx, preds, q, m.s());
    } catch (const std::exception& e) {
      FAIL("run_inference threw: " << e.what());
      continue;
    }
    REQUIRE(r.y.size() == 2);
    CHECK(branch_interval(r.y[0]).contains(r.final_interval));
    CHECK(r.final_interval.contains(r.predicted_months));
    CHECK(r.retrieved_case_ids.size() == 3);
    CHECK(std::isfinite(r.risk_score));
  }
}
