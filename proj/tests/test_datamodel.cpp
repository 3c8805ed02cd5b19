#include <doctest.h>

#include <cmath>
#include <limits>

#include "prognos/cohort.hpp"
#include "prognos/datamodel.hpp"
#include "prognos/error.hpp"
#include "prognos/manifest.hpp"
#include "support.hpp"

using namespace prognos;
using prognos::testing::TempDir;
using nlohmann::json;

namespace {

template <class T>
T round_trip(const T& v) {
  json j = v;
  return json::parse(j.dump()).get<T>();
}

CaseRecord bundled_case(const std::string& id) {
  const auto cohort = load_cohort(testing::bundled_cohort() / "cohort.json");
  const auto* c = cohort.find(id);
  REQUIRE(c != nullptr);
  return *c;
}

}  // namespace

TEST_CASE("strata cover the month axis with half-open intervals") {
  CHECK(stratum_for_time(0.0) == RiskStratum::High);
  CHECK(stratum_for_time(11.99) == RiskStratum::High);
  CHECK(stratum_for_time(12.0) == RiskStratum::HighIntermediate);
  CHECK(stratum_for_time(24.0) == RiskStratum::LowIntermediate);
  CHECK(stratum_for_time(36.0) == RiskStratum::Low);
  CHECK(stratum_for_time(500.0) == RiskStratum::Low);
  for (auto s : kAllStrata) CHECK(stratum_for_time(interval_of(s).lo) == s);
  CHECK(interval_label(interval_of(RiskStratum::Low)) == "36+");
  CHECK(interval_label(interval_of(RiskStratum::HighIntermediate)) == "12-24");
  CHECK_FALSE(interval_of(RiskStratum::Low).bounded());
}

TEST_CASE("stratum names parse loosely") {
  CHECK(parse_stratum("High") == RiskStratum::High);
  CHECK(parse_stratum("high-intermediate") == RiskStratum::HighIntermediate);
  CHECK(parse_stratum("Low intermediate") == RiskStratum::LowIntermediate);
  CHECK(parse_stratum("LowIntermediate") == RiskStratum::LowIntermediate);
  CHECK(parse_stratum("low") == RiskStratum::Low);
  CHECK_FALSE(parse_stratum("medium").has_value());
}

TEST_CASE("magnification and pyramid level are a fixed bijection") {
  CHECK(level_for(Magnification::X2_5) == 3);
  CHECK(level_for(Magnification::X10) == 2);
  CHECK(level_for(Magnification::X20) == 1);
  for (auto m : {Magnification::X2_5, Magnification::X10, Magnification::X20}) {
    CHECK(magnification_for_level(level_for(m)) == m);
    CHECK(magnification_from_value(magnification_value(m)) == m);
  }
  CHECK_THROWS(magnification_for_level(0));
  CHECK_FALSE(magnification_from_value(40.0).has_value());
}

TEST_CASE("json encoding round-trips every domain type") {
  SurvivalLabel label{13.5, false};
  CHECK(round_trip(label) == label);
  CHECK(round_trip(interval_of(RiskStratum::Low)) == interval_of(RiskStratum::Low));
  CHECK(round_trip(Interval{12, 24}) == Interval{12, 24});

  PatchRecord p;
  p.patch_id = "p7";
  p.level = 1;
  p.magnification = Magnification::X20;
  p.x = 1024;
  p.y = 512;
  p.width = p.height = 512;
  p.image_ref = "tiles/p7.png";
  p.embedding = normalized({1.0f, 2.0f, 2.0f});
  p.attention = 0.25;
  p.meta = {{"tissue", "tumor"}};
  CHECK(round_trip(p) == p);

  Report r{"text", ReportSource::Mag10, "p7", Confidence::Low, {"x"}};
  CHECK(round_trip(r) == r);

  StructuredWsiReport sw{{{"Tumor Grade", "high"}, {"Necrosis Percentage", std::string(kNotAssessed)}}, "s"};
  CHECK(round_trip(sw) == sw);

  GeneProfile gp{{{"TP53", 1.5, true}, {"MYC", -0.25, false}}};
  CHECK(round_trip(gp) == gp);
  GeneCategoryStats gs{GeneCategory::Oncogene, 1.0, 0.5, 0.25, 4};
  CHECK(round_trip(gs) == gs);

  CoTRecord cot{"t", RiskStratum::HighIntermediate, {"a", "b"}, "u", CotQuality::High, 2, true, false, true};
  CHECK(round_trip(cot) == cot);

  BankEntry e{"c1", Modality::Gene, r, cot, label, normalized({0.0f, 1.0f})};
  CHECK(round_trip(e) == e);

  ExpertPrediction ep{"c1", "MCAT", -0.4};
  CHECK(round_trip(ep) == ep);

  CaseRecord cr{"c1", "a/manifest.json", "a/genes.tsv", label, true};
  CHECK(round_trip(cr) == cr);

  InferenceResult ir;
  ir.case_id = "c1";
  ir.y = {1, 2};
  ir.final_stratum = RiskStratum::HighIntermediate;
  ir.final_interval = interval_of(RiskStratum::HighIntermediate);
  ir.predicted_months = 18.5;
  ir.risk_score = -std::log(18.5 / 12.0);
  ir.wsi_report = r;
  ir.retrieved_case_ids = {"a", "b", "c"};
  ir.flags = {"time_clamped"};
  CHECK(round_trip(ir) == ir);

  InferenceResult open;
  open.final_interval = interval_of(RiskStratum::Low);
  CHECK(round_trip(open).final_interval == open.final_interval);
}

TEST_CASE("report invariants") {
  Report ok{"x", ReportSource::Mag20, "p", Confidence::High, {}};
  CHECK_NOTHROW(check_report(ok));
  Report global_with_conf{"x", ReportSource::Global, "s", Confidence::High, {}};
  CHECK_THROWS_AS(check_report(global_with_conf), Error);
}

TEST_CASE("unit vectors") {
  CHECK(is_unit(normalized({3.0f, 4.0f})));
  CHECK(l2_norm({3.0f, 4.0f}) == doctest::Approx(5.0));
  CHECK_FALSE(is_unit({1.0f, 1.0f}));
}

TEST_CASE("validate_case reports violations instead of throwing") {
  SUBCASE("well-formed bundled case") {
    CHECK(validate_case(bundled_case("SYN001")).empty());
  }
  SUBCASE("negative time") {
    auto c = bundled_case("SYN001");
    c.label = SurvivalLabel{-1.0, true};
    auto v = validate_case(c);
    REQUIRE(v.size() == 1);
    CHECK(v[0].kind == ViolationKind::NegativeTime);
  }
  SUBCASE("duplicate gene symbol") {
    TempDir tmp("dup");
    auto c = bundled_case("SYN001");
    save_gene_profile(GeneProfile{{{"TP53", 1.0, false}, {"TP53", 2.0, true}}}, tmp / "genes.tsv");
    c.gene_profile = tmp / "genes.tsv";
    auto v = validate_case(c);
    REQUIRE(v.size() == 1);
    CHECK(v[0].kind == ViolationKind::DuplicateSymbol);
  }
  SUBCASE("unreadable files become IO violations") {
    CaseRecord c{"x", "/nonexistent/manifest.json", "/nonexistent/genes.tsv", std::nullopt, false};
    auto v = validate_case(c);
    CHECK(v.size() == 2);
    for (const auto& e : v) CHECK(e.kind == ViolationKind::IOViolation);
  }
  SUBCASE("duplicate case ids across a cohort") {
    auto c = bundled_case("SYN001");
    auto v = validate_cohort({c, c});
    CHECK(v.size() == 1);
  }
}

TEST_CASE("cohort times given in days convert to months") {
  TempDir tmp("days");
  testing::write_file(tmp / "cohort.json", json{{"name", "d"},
                                                {"time_unit", "days"},
                                                {"cases",
                                                 {{{"case_id", "a"},
                                                   {"slide_manifest", "a.json"},
                                                   {"gene_profile", "a.tsv"},
                                                   {"label", {{"time", 304.4}, {"event", true}}}}}}}
                                               .dump());
  const auto c = load_cohort(tmp / "cohort.json");
  REQUIRE(c.cases.size() == 1);
  CHECK(c.cases[0].label->time_months == doctest::Approx(10.0));
  CHECK(c.cases[0].slide_manifest == tmp / "a.json");
}

TEST_CASE("gene profile and expert CSV round-trip") {
  TempDir tmp("io");
  GeneProfile gp{{{"TP53", 1.25, true}, {"MYC", -0.5, false}, {"EGFR", 0.0, false}}};
  save_gene_profile(gp, tmp / "g.tsv");
  CHECK(load_gene_profile(tmp / "g.tsv") == gp);

  std::vector<ExpertPrediction> ex{{"a", "MCAT", 0.5}, {"a", "CCL", -1.25}, {"b", "MCAT", 2.0}};
  save_experts(ex, tmp / "e.csv");
  CHECK(load_experts(tmp / "e.csv") == ex);
  CHECK(predictions_for(ex, "a").size() == 2);
}
