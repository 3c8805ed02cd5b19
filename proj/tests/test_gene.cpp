#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "prognos/error.hpp"
#include "prognos/gene_pipeline.hpp"
#include "prognos/mock_backend.hpp"
#include "prognos/prompt_ids.hpp"
#include "support.hpp"

using namespace prognos;
using namespace prognos::testing;
using namespace prognos::gene;

namespace {

CategoryMap small_map() {
  CategoryMap m;
  m.add("TP53", GeneCategory::TumorSuppressor);
  m.add("RB1", GeneCategory::TumorSuppressor);
  m.add("PTEN", GeneCategory::TumorSuppressor);
  m.add("MYC", GeneCategory::Oncogene);
  m.add("EGFR", GeneCategory::ProteinKinase);
  return m;
}

GeneKnowledgeBase shipped_kb() { return GeneKnowledgeBase::load(source_dir() / "resources" / "gene_kb.json"); }

// z_i = (x_i - mean) / population sd, written out longhand.
std::vector<double> z_oracle(const std::vector<double>& x) {
  double sum = 0.0;
  for (double v : x) sum += v;
  const double mean = sum / double(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / double(x.size()));
  std::vector<double> z;
  for (double v : x) z.push_back(sd > 0 ? (v - mean) / sd : 0.0);
  return z;
}

}  // namespace

TEST_CASE("stratify partitions mapped genes and spills the rest") {
  const auto m = small_map();
  auto s = stratify(GeneProfile{{{"TP53", 1, true}, {"MYC", 2, false}}}, m);
  CHECK(s.of(GeneCategory::TumorSuppressor).size() == 1);
  CHECK(s.of(GeneCategory::Oncogene).size() == 1);
  CHECK(s.spillover.empty());

  s = stratify(GeneProfile{{{"TP53", 1, true}, {"NOTAGENE", 2, false}}}, m);
  REQUIRE(s.spillover.size() == 1);
  CHECK(s.spillover[0].symbol == "NOTAGENE");
  CHECK(s.warnings.size() == 1);

  s = stratify(GeneProfile{}, m);
  for (const auto& sub : s.subsets) CHECK(sub.empty());
  CHECK_FALSE(s.warnings.empty());
}

TEST_CASE("category map keeps the first category for a duplicated symbol") {
  const auto j = nlohmann::json::parse(R"({"categories":[
      {"category":"TumorSuppressor","genes":["TP53"]},
      {"category":"Oncogene","genes":["TP53","MYC"]}]})");
  const auto m = CategoryMap::from_json(j);
  CHECK(m.find("TP53") == GeneCategory::TumorSuppressor);
  CHECK(m.warnings().size() == 1);
  const auto shipped = CategoryMap::load(source_dir() / "resources" / "gene_categories.json");
  CHECK(shipped.size() == 48);
  CHECK(shipped.warnings().empty());
}

TEST_CASE("knowledge base lookup is total") {
  const auto kb = shipped_kb();
  CHECK(kb.lookup("TP53").found);
  CHECK_FALSE(kb.lookup("TP53").function_summary.empty());
  CHECK(kb.lookup("p16").found);  // alias of CDKN2A
  const auto miss = kb.lookup("NOTAGENE");
  CHECK_FALSE(miss.found);
  CHECK(miss.function_summary.empty());
}

TEST_CASE("category statistics") {
  auto s = category_stats(GeneCategory::Oncogene, {{"A", 1, false}, {"B", 2, true}, {"C", 3, true}, {"D", 4, false}});
  CHECK(s.mean == 2.5);
  CHECK(s.median == 2.5);
  CHECK(s.mutation_ratio == 0.5);
  CHECK(s.n_genes == 4);
  s = category_stats(GeneCategory::Oncogene, {{"A", 7, true}});
  CHECK(s.mean == 7.0);
  CHECK(s.median == 7.0);
  CHECK(s.mutation_ratio == 1.0);
  s = category_stats(GeneCategory::Oncogene, {{"A", 3, false}, {"B", 1, false}, {"C", 2, false}});
  CHECK(s.mean == 2.0);
  CHECK(s.median == 2.0);
  CHECK(s.mutation_ratio == 0.0);
  CHECK_THROWS_AS(category_stats(GeneCategory::Oncogene, {}), Error);
}

TEST_CASE("median matches a sort-based oracle on random subsets") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 2);
  for (int t = 0; t < 200; ++t) {
    std::vector<GeneRecord> sub;
    const int k = 1 + int(rng() % 15);
    for (int i = 0; i < k; ++i) sub.push_back({"G" + std::to_string(i), n(rng), bool(rng() % 2)});
    std::vector<double> x;
    for (const auto& g : sub) x.push_back(g.expression);
    std::sort(x.begin(), x.end());
    const double med = k % 2 ? x[k / 2] : (x[k / 2 - 1] + x[k / 2]) / 2.0;
    CHECK(category_stats(GeneCategory::Oncogene, sub).median == doctest::Approx(med).epsilon(1e-12));
  }
}

TEST_CASE("fallback ranks by absolute z-score") {
  const std::vector<GeneRecord> sub{{"AAA", 2.0, false}, {"BBB", -1.5, false}, {"CCC", 0.1, false}};
  const auto z = expression_z(sub);
  const auto zo = z_oracle({2.0, -1.5, 0.1});
  REQUIRE(z.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(z[i] == doctest::Approx(zo[i]));
  CHECK(fallback_selection(sub, 2) == std::vector<std::string>{"AAA", "BBB"});
  CHECK(expression_z({{"A", 1, false}, {"B", 1, false}}) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("gene selection validates symbols and falls back") {
  const std::vector<GeneRecord> sub{{"TP53", 2.0, true}, {"RB1", -1.5, false}, {"PTEN", 0.1, false}};
  const auto stats = category_stats(GeneCategory::TumorSuppressor, sub);
  const auto kb = shipped_kb();

  std::vector<std::string> dropped;
  CHECK(parse_gene_selection("TP53, RB1, FAKE1", sub, 10, &dropped) == std::vector<std::string>{"TP53", "RB1"});
  CHECK(dropped == std::vector<std::string>{"FAKE1"});
  CHECK(parse_gene_selection("TP53, RB1, PTEN", sub, 2).size() == 2);

  Scripted m;
  m.transport->push(prompt_ids::kGeneSelect, "TP53, RB1");
  auto sel = select_key_genes(stats, sub, kb, "c1", m.s());
  CHECK(sel.symbols == std::vector<std::string>{"TP53", "RB1"});
  CHECK_FALSE(sel.fallback);

  m.transport->push(prompt_ids::kGeneSelect, "FAKE1");
  m.transport->push(prompt_ids::kGeneSelect, "FAKE1");
  sel = select_key_genes(stats, sub, kb, "c1", m.s(), 2);
  CHECK(sel.fallback);
  CHECK(sel.symbols == std::vector<std::string>{"TP53", "RB1"});
  CHECK_FALSE(sel.warnings.empty());
}

TEST_CASE("placeholders and low-information summaries") {
  const auto p = placeholder_report(GeneCategory::Oncogene, "c1");
  CHECK(p.has_flag("placeholder"));
  CHECK(p.source == ReportSource::GeneCategory);

  Scripted m;
  m.transport->set_fallback("gene summary");
  std::vector<Report> reps;
  for (auto c : kAllGeneCategories) reps.push_back(placeholder_report(c, "c1"));
  CHECK_THROWS_AS(summarize_gene(reps, "c1", m.s()), Error);

  reps[0] = Report{"Tumor suppressors: TP53 mutated.", ReportSource::GeneCategory, "c1", std::nullopt, {}};
  auto s = summarize_gene(reps, "c1", m.s());
  CHECK(s.text == "gene summary");
  CHECK(s.has_flag("low_information"));

  for (int i = 0; i < 6; ++i) reps[i] = Report{"r" + std::to_string(i), ReportSource::GeneCategory, "c1", std::nullopt, {}};
  s = summarize_gene(reps, "c1", m.s());
  CHECK_FALSE(s.has_flag("low_information"));
}

TEST_CASE("oracle-mode category report names a mutated TP53") {
  BackendConfig cfg;
  Gateway gw(cfg, TemplateStore(source_dir() / "prompts"),
             std::make_unique<OracleTransport>(std::make_shared<OracleRegistry>(), cfg.embed_dim));
  TraceLog trace;
  AgentSession s(gw, trace);
  const std::vector<GeneRecord> sub{{"TP53", 1.8, true}, {"RB1", 0.2, false}};
  const auto r = category_report(category_stats(GeneCategory::TumorSuppressor, sub), {sub[0]}, shipped_kb(), "c1", s);
  CHECK(r.text.find("TP53") != std::string::npos);
  CHECK(r.source == ReportSource::GeneCategory);
}

TEST_CASE("analyze_gene on a bundled profile covers all six categories") {
  BackendConfig cfg;
  Gateway gw(cfg, TemplateStore(source_dir() / "prompts"),
             std::make_unique<OracleTransport>(std::make_shared<OracleRegistry>(), cfg.embed_dim));
  TraceLog trace;
  AgentSession s(gw, trace);
  const auto profile = load_gene_profile(bundled_cohort() / "cases" / "SYN001" / "genes.tsv");
  const auto cmap = CategoryMap::load(source_dir() / "resources" / "gene_categories.json");
  const auto a = analyze_gene(profile, cmap, shipped_kb(), "SYN001", s);
  CHECK(a.category_reports.size() == 6);
  for (const auto& st : a.stats) CHECK(st.has_value());
  for (const auto& sel : a.selections) {
    CHECK_FALSE(sel.symbols.empty());
    CHECK(sel.symbols.size() <= 10);
  }
  CHECK(a.summary.source == ReportSource::GeneSummary);
  CHECK_FALSE(a.summary.has_flag("low_information"));
}
