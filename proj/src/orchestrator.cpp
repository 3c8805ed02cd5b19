#include "prognos/orchestrator.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <fstream>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <opencv2/core/version.hpp>

#include "prognos/error.hpp"
#include "prognos/inference.hpp"
#include "prognos/km_plot.hpp"
#include "prognos/manifest.hpp"
#include "prognos/mock_backend.hpp"
#include "prognos/retrieval.hpp"
#include "prognos/text_parse.hpp"
#include "prognos/wsi_pipeline.hpp"

namespace prognos::run {

using nlohmann::json;

void assert_no_leakage(const std::vector<std::string>& used, const std::vector<std::string>& test,
                       const std::string& what) {
  const std::set<std::string> test_set(test.begin(), test.end());
  std::vector<std::string> leaked;
  for (const auto& id : used) {
    if (test_set.count(id)) leaked.push_back(id);
  }
  if (!leaked.empty()) {
    std::string list;
    for (const auto& id : leaked) list += (list.empty() ? "" : ", ") + id;
    throw Error(ErrorCode::Leakage, what + " contains test case(s) " + list);
  }
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!first) first = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
}

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

Orchestrator::Orchestrator(RunConfig config) : config_(std::move(config)) {
  config_.validate();
  cohort_ = load_cohort(config_.cohort);
  experts_ = load_experts(config_.experts);
  checklist_ = wsi::load_checklist(config_.checklist);
  categories_ = gene::CategoryMap::load(config_.gene_categories);
  kb_ = gene::GeneKnowledgeBase::load(config_.gene_kb);
  if (cohort_.cases.empty()) throw Error(ErrorCode::InvalidArgument, "cohort has no cases");

  if (config_.backend.kind == BackendKind::Mock && config_.backend.mock_mode == MockMode::Oracle) {
    // The oracle reads the hidden tile and slide metadata of every case.
    oracle_ = std::make_shared<OracleRegistry>();
    for (const auto& c : cohort_.cases) oracle_->ingest(c.case_id, load_slide_manifest(c.slide_manifest));
  }
  gateway_ = std::make_unique<Gateway>(config_.backend, TemplateStore(config_.prompts_dir),
                                       make_transport(config_.backend, oracle_));
}

Orchestrator::~Orchestrator() = default;

FoldPlan Orchestrator::plan(const std::string& fold) const {
  FoldPlan p;
  if (fold == "holdout") {
    p.name = "holdout";
    p.train = sorted(cohort_.ids(false));
    p.test = sorted(cohort_.ids(true));
    if (p.test.empty()) throw Error(ErrorCode::InvalidArgument, "cohort has no holdout cases");
    return p;
  }
  std::size_t idx = 0;
  try {
    std::size_t used = 0;
    const long v = std::stol(fold, &used);
    if (used != fold.size() || v < 0) throw std::invalid_argument(fold);
    idx = static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "fold must be 'holdout' or an index, got '" + fold + "'");
  }
  const auto plans = cv_plans();
  if (idx >= plans.size()) {
    throw Error(ErrorCode::InvalidArgument, fmt::format("fold {} out of range (folds = {})", idx, plans.size()));
  }
  return plans[idx];
}

std::vector<FoldPlan> Orchestrator::cv_plans() const {
  const auto folds = stats::kfold(cohort_.all_ids(), static_cast<std::size_t>(config_.folds), config_.seed);
  std::vector<FoldPlan> out;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    FoldPlan p;
    p.name = fmt::format("fold{}", i);
    p.test = sorted(folds[i]);
    for (std::size_t j = 0; j < folds.size(); ++j) {
      if (j != i) p.train.insert(p.train.end(), folds[j].begin(), folds[j].end());
    }
    p.train = sorted(std::move(p.train));
    out.push_back(std::move(p));
  }
  return out;
}

fs::path Orchestrator::fold_dir(const FoldPlan& plan) const { return config_.output_dir / plan.name; }

CaseAnalysis Orchestrator::run_analysis(const CaseRecord& rec) {
  TraceLog trace(config_.output_dir / "traces" / "analysis" / (rec.case_id + ".jsonl"));
  AgentSession session(*gateway_, trace, rec.case_id);

  wsi::WsiOptions wo;
  wo.tau_v = config_.tau_v;
  wo.tau_t = config_.tau_t;
  wo.policy = config_.policy;
  wo.dbscan_eps = config_.dbscan_eps;
  wo.dbscan_min_pts = static_cast<std::size_t>(config_.dbscan_min_pts);
  wo.attention_percentile = config_.attention_percentile;
  wo.max_candidates = static_cast<std::size_t>(config_.max_candidates);
  wo.checklist = checklist_;
  wo.level3_dir = config_.output_dir / "level3";
  auto w = wsi::analyze_wsi(load_slide_manifest(rec.slide_manifest), rec.case_id, wo, session);
  auto g = gene::analyze_gene(load_gene_profile(rec.gene_profile), categories_, kb_, rec.case_id, session,
                              static_cast<std::size_t>(config_.max_genes));

  CaseAnalysis a;
  a.case_id = rec.case_id;
  a.wsi = std::move(w.summary);
  a.gene = std::move(g.summary);
  for (auto& s : w.warnings) a.warnings.push_back("wsi: " + s);
  for (auto& s : g.warnings) a.warnings.push_back("gene: " + s);

  json j{{"case_id", a.case_id}, {"wsi_summary", a.wsi}, {"gene_summary", a.gene},
         {"structured", w.structured}, {"selected_patches", w.cos.selected.size()}, {"warnings", a.warnings}};
  write_text(config_.output_dir / "analysis" / (rec.case_id + ".json"), j.dump(2) + "\n");
  return a;
}

const CaseAnalysis& Orchestrator::analyze(const std::string& case_id) {
  const CaseRecord* rec = cohort_.find(case_id);
  if (!rec) throw Error(ErrorCode::InvalidArgument, "unknown case " + case_id);
  std::shared_ptr<const CaseAnalysis> hit;
  {
    std::lock_guard lock(memo_mu_);
    if (auto it = memo_.find(case_id); it != memo_.end()) hit = it->second;
  }
  if (hit) return *hit;
  // Concurrent callers for the same case wait on its lock instead of
  // writing the same trace file twice.
  std::shared_ptr<std::mutex> case_mu;
  {
    std::lock_guard lock(memo_mu_);
    auto& m = case_locks_[case_id];
    if (!m) m = std::make_shared<std::mutex>();
    case_mu = m;
  }
  std::lock_guard case_lock(*case_mu);
  {
    std::lock_guard lock(memo_mu_);
    if (auto it = memo_.find(case_id); it != memo_.end()) return *it->second;
  }
  auto a = std::make_shared<const CaseAnalysis>(run_analysis(*rec));
  std::lock_guard lock(memo_mu_);
  return *memo_.emplace(case_id, std::move(a)).first->second;
}

void Orchestrator::analyze_all(const std::vector<std::string>& ids) {
  parallel_for(ids.size(), config_.jobs, [&](std::size_t i) { analyze(ids[i]); });
}

BankBuild Orchestrator::build_bank(const FoldPlan& plan) {
  assert_no_leakage(plan.train, plan.test, "bank plan for " + plan.name);
  const fs::path dir = fold_dir(plan);
  fs::create_directories(dir);
  const fs::path wsi_path = dir / "bank_wsi.jsonl";
  const fs::path gene_path = dir / "bank_gene.jsonl";
  for (const auto& p : {wsi_path, gene_path}) {
    fs::remove(p);
    fs::remove(bank::CaseBank::sidecar_path(p));
  }

  analyze_all(plan.train);
  std::vector<std::array<BankEntry, 2>> rows(plan.train.size());
  parallel_for(plan.train.size(), config_.jobs, [&](std::size_t i) {
    const std::string& id = plan.train[i];
    const CaseRecord* rec = cohort_.find(id);
    if (!rec->label) throw Error(ErrorCode::InvalidArgument, "bank case " + id + " has no survival label");
    const CaseAnalysis& a = analyze(id);
    TraceLog trace(dir / "traces" / (id + ".bank.jsonl"));
    AgentSession session(*gateway_, trace, id);
    int slot = 0;
    for (const auto& [modality, report] : {std::pair{Modality::Wsi, &a.wsi}, std::pair{Modality::Gene, &a.gene}}) {
      auto cot = bank::generate_cot(*report, *rec->label, modality, id, session);
      cot = bank::refine_loop(std::move(cot), *report, *rec->label, modality, id, session,
                              config_.max_refine_rounds);
      BankEntry e;
      e.case_id = id;
      e.modality = modality;
      e.summarized_report = *report;
      e.cot = std::move(cot);
      e.label = *rec->label;
      e.report_embedding = session.embed_text(report->text);
      rows[i][slot++] = std::move(e);
    }
  });

  BankBuild out;
  out.plan = plan;
  out.dir = dir;
  auto wsi_bank = bank::CaseBank::open(wsi_path, Modality::Wsi);
  auto gene_bank = bank::CaseBank::open(gene_path, Modality::Gene);
  for (auto& r : rows) {
    for (auto& e : r) {
      if (e.cot.force_accept) out.force_accepted.push_back(e.case_id + "/" + std::string(to_string(e.modality)));
      (e.modality == Modality::Wsi ? wsi_bank : gene_bank).append(std::move(e));
    }
  }
  out.wsi_entries = wsi_bank.size();
  out.gene_entries = gene_bank.size();

  json m{{"fold", plan.name},
         {"train", plan.train},
         {"test", plan.test},
         {"config_hash", config_.hash()},
         {"schema_version", bank::kBankSchemaVersion},
         {"wsi_entries", out.wsi_entries},
         {"gene_entries", out.gene_entries},
         {"force_accepted", out.force_accepted}};
  write_text(dir / "bank_manifest.json", m.dump(2) + "\n");
  return out;
}

std::vector<InferenceResult> Orchestrator::infer(const FoldPlan& plan,
                                                 const std::vector<ExpertPrediction>& experts) {
  const fs::path dir = fold_dir(plan);
  const json m = read_json_file(dir / "bank_manifest.json");
  const auto stored_train = m.at("train").get<std::vector<std::string>>();
  if (m.at("fold").get<std::string>() != plan.name || stored_train != plan.train ||
      m.at("test").get<std::vector<std::string>>() != plan.test) {
    throw Error(ErrorCode::Leakage, "bank in " + dir.string() + " was built for a different split; rebuild it");
  }
  const auto wsi_bank = bank::CaseBank::load(dir / "bank_wsi.jsonl");
  const auto gene_bank = bank::CaseBank::load(dir / "bank_gene.jsonl");
  assert_no_leakage(wsi_bank.case_ids(), plan.test, "WSI bank of " + plan.name);
  assert_no_leakage(gene_bank.case_ids(), plan.test, "gene bank of " + plan.name);
  const auto index = retrieval::build_index(wsi_bank, gene_bank, {config_.w_wsi, config_.w_gene});

  // Expert boundaries come from the bank population only.
  const std::set<std::string> population(stored_train.begin(), stored_train.end());
  assert_no_leakage(std::vector<std::string>(population.begin(), population.end()), plan.test,
                    "quartile population of " + plan.name);
  const auto quartiles = infer::expert_quartiles(experts, population);

  analyze_all(plan.test);
  std::vector<InferenceResult> results(plan.test.size());
  infer::InferenceOptions io;
  io.k = static_cast<std::size_t>(config_.k);
  io.depth = config_.depth;
  parallel_for(plan.test.size(), config_.jobs, [&](std::size_t i) {
    const std::string& id = plan.test[i];
    const CaseAnalysis& a = analyze(id);
    TraceLog trace(dir / "traces" / (id + ".infer.jsonl"));
    AgentSession session(*gateway_, trace, id);
    results[i] = infer::run_inference(id, a.wsi, a.gene, index, predictions_for(experts, id), quartiles, session, io);
  });

  std::string csv = "case_id,predicted_months,risk_score,stratum,time,event\n";
  for (const auto& r : results) {
    write_text(dir / "results" / (r.case_id + ".json"), json(r).dump(2) + "\n");
    write_text(dir / "results" / (r.case_id + ".reasoning.txt"), r.reasoning_report.text + "\n");
    const CaseRecord* rec = cohort_.find(r.case_id);
    csv += fmt::format("{},{:.2f},{:.6f},{},{},{}\n", r.case_id, r.predicted_months, r.risk_score,
                       to_string(r.final_stratum),
                       rec->label ? fmt::format("{:.2f}", rec->label->time_months) : std::string("NA"),
                       rec->label ? (rec->label->event ? "1" : "0") : "NA");
  }
  write_text(dir / "predictions.csv", csv);
  return results;
}

Evaluation Orchestrator::evaluate() {
  Evaluation ev;
  ev.dir = config_.output_dir / "eval";
  analyze_all(cohort_.all_ids());

  std::vector<double> pooled_risk;
  std::vector<SurvivalLabel> pooled_labels;
  std::string pred_csv = "fold,case_id,predicted_months,risk_score,stratum,time,event\n";
  std::string table = "fold,n_test,c_index\n";
  std::vector<double> cs;
  for (const auto& plan : cv_plans()) {
    build_bank(plan);
    FoldResult fr;
    fr.plan = plan;
    fr.results = infer(plan, experts_);
    std::vector<double> risks;
    std::vector<SurvivalLabel> labels;
    for (const auto& r : fr.results) {
      const CaseRecord* rec = cohort_.find(r.case_id);
      if (!rec->label) continue;
      risks.push_back(r.risk_score);
      labels.push_back(*rec->label);
      pred_csv += fmt::format("{},{},{:.2f},{:.6f},{},{:.2f},{}\n", plan.name, r.case_id, r.predicted_months,
                              r.risk_score, to_string(r.final_stratum), rec->label->time_months,
                              rec->label->event ? 1 : 0);
    }
    pooled_risk.insert(pooled_risk.end(), risks.begin(), risks.end());
    pooled_labels.insert(pooled_labels.end(), labels.begin(), labels.end());
    try {
      fr.c_index = stats::c_index(risks, labels);
      cs.push_back(*fr.c_index);
      table += fmt::format("{},{},{:.3f}\n", plan.name, fr.results.size(), *fr.c_index);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoComparablePairs) throw;
      ev.warnings.push_back(plan.name + ": no comparable pairs; excluded from the mean");
      table += fmt::format("{},{},NA\n", plan.name, fr.results.size());
    }
    ev.folds.push_back(std::move(fr));
  }
  if (cs.empty()) throw Error(ErrorCode::NoComparablePairs, "no fold produced a C-index");
  ev.c_index = stats::mean_std(cs);
  table += fmt::format("mean_std,{},{}\n", pooled_risk.size(), stats::format_mean_std(ev.c_index));
  write_text(ev.dir / "cindex.csv", table);
  write_text(ev.dir / "predictions.csv", pred_csv);

  json summary{{"cohort", cohort_.name},
               {"folds", config_.folds},
               {"c_index_mean", ev.c_index.mean},
               {"c_index_sd", ev.c_index.sd},
               {"c_index", stats::format_mean_std(ev.c_index)}};
  try {
    const auto split = stats::median_split(pooled_risk);
    std::vector<SurvivalLabel> high, low;
    for (auto i : split.high) high.push_back(pooled_labels[i]);
    for (auto i : split.low) low.push_back(pooled_labels[i]);
    plot::write_km_csv({{"high", stats::km_curve(high)}, {"low", stats::km_curve(low)}}, ev.dir / "km.csv");
    ev.logrank = stats::logrank(high, low);
    summary["median_risk"] = split.threshold;
    summary["n_high"] = high.size();
    summary["n_low"] = low.size();
    summary["logrank_chi2"] = ev.logrank->chi2;
    summary["logrank_p"] = fmt::format("{:.3g}", ev.logrank->p);
    write_text(ev.dir / "logrank.csv",
               fmt::format("cohort,chi2,p\n{},{:.3f},{:.3g}\n", cohort_.name, ev.logrank->chi2, ev.logrank->p));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateSplit && e.code() != ErrorCode::NoEvents) throw;
    ev.warnings.push_back(std::string("KM / log-rank skipped: ") + e.what());
  }
  summary["warnings"] = ev.warnings;
  write_text(ev.dir / "summary.json", summary.dump(2) + "\n");
  return ev;
}

void Orchestrator::write_run_manifest(const std::string& command) const {
  json m{{"command", command},
         {"version", kVersion},
         {"config_hash", config_.hash()},
         {"config", config_.canonical()},
         {"seed", config_.seed},
         {"backend", config_.backend.kind == BackendKind::Mock ? "mock" : "http"},
         {"libraries",
          {{"fmt", FMT_VERSION},
           {"opencv", CV_VERSION},
           {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                                         NLOHMANN_JSON_VERSION_PATCH)}}},
#if defined(__clang__)
         {"compiler", fmt::format("clang {}.{}", __clang_major__, __clang_minor__)},
#elif defined(__GNUC__)
         {"compiler", fmt::format("gcc {}.{}", __GNUC__, __GNUC_MINOR__)},
#endif
  };
  write_text(config_.output_dir / "run_manifest.json", m.dump(2) + "\n");
}

}  // namespace prognos::run
