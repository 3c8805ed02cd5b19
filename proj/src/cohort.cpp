#include "prognos/cohort.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "prognos/error.hpp"
#include "prognos/text_parse.hpp"

namespace prognos {

const CaseRecord* Cohort::find(const std::string& case_id) const {
  for (const auto& c : cases) {
    if (c.case_id == case_id) return &c;
  }
  return nullptr;
}

std::vector<std::string> Cohort::ids(bool holdout) const {
  std::vector<std::string> out;
  for (const auto& c : cases) {
    if (c.holdout == holdout) out.push_back(c.case_id);
  }
  return out;
}

std::vector<std::string> Cohort::all_ids() const {
  std::vector<std::string> out;
  for (const auto& c : cases) out.push_back(c.case_id);
  return out;
}

Cohort load_cohort(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read cohort " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
  Cohort c;
  c.file = fs::absolute(path);
  const fs::path dir = c.file.parent_path();
  try {
    c.name = j.value("name", path.parent_path().filename().string());
    const std::string unit = j.value("time_unit", "months");
    double scale = 1.0;
    if (unit == "days") {
      scale = 1.0 / kDaysPerMonth;
    } else if (unit != "months") {
      throw Error(ErrorCode::Parse, "time_unit must be months or days, got " + unit);
    }
    std::set<std::string> seen;
    for (const auto& jc : j.at("cases")) {
      CaseRecord r;
      r.case_id = jc.at("case_id").get<std::string>();
      if (r.case_id.empty()) throw Error(ErrorCode::Parse, "empty case_id in " + path.string());
      if (!seen.insert(r.case_id).second) {
        throw Error(ErrorCode::Parse, "duplicate case_id " + r.case_id + " in " + path.string());
      }
      r.slide_manifest = dir / jc.at("slide_manifest").get<std::string>();
      r.gene_profile = dir / jc.at("gene_profile").get<std::string>();
      if (jc.contains("label") && !jc.at("label").is_null()) {
        const auto& jl = jc.at("label");
        SurvivalLabel l;
        l.time_months = (jl.contains("time") ? jl.at("time") : jl.at("time_months")).get<double>() * scale;
        l.event = jl.at("event").get<bool>();
        if (!std::isfinite(l.time_months) || l.time_months < 0.0) {
          throw Error(ErrorCode::Parse, "invalid survival time for " + r.case_id);
        }
        r.label = l;
      }
      r.holdout = jc.value("holdout", false);
      c.cases.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
  return c;
}

void save_cohort(const Cohort& cohort, const fs::path& path) {
  const fs::path dir = fs::absolute(path).parent_path();
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& r : cohort.cases) {
    nlohmann::json jc{{"case_id", r.case_id},
                      {"slide_manifest", fs::relative(r.slide_manifest, dir).generic_string()},
                      {"gene_profile", fs::relative(r.gene_profile, dir).generic_string()}};
    if (r.label) jc["label"] = {{"time", r.label->time_months}, {"event", r.label->event}};
    if (r.holdout) jc["holdout"] = true;
    cases.push_back(std::move(jc));
  }
  nlohmann::json j{{"name", cohort.name}, {"time_unit", "months"}, {"cases", cases}};
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<ExpertPrediction> load_experts(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read expert predictions " + path.string());
  std::vector<ExpertPrediction> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = text::trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(text::trim(cell));
    if (cols.size() != 3) {
      throw Error(ErrorCode::Parse, fmt::format("{}:{}: expected 3 columns", path.string(), lineno));
    }
    if (lineno == 1 && cols[0] == "case_id") continue;
    ExpertPrediction p{cols[0], cols[1], 0.0};
    try {
      std::size_t used = 0;
      p.risk_score = std::stod(cols[2], &used);
      if (used != cols[2].size() || !std::isfinite(p.risk_score)) throw std::invalid_argument(cols[2]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::Parse, fmt::format("{}:{}: bad risk score '{}'", path.string(), lineno, cols[2]));
    }
    out.push_back(std::move(p));
  }
  return out;
}

void save_experts(const std::vector<ExpertPrediction>& predictions, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "case_id,model_name,risk_score\n";
  for (const auto& p : predictions) out << fmt::format("{},{},{:.6f}\n", p.case_id, p.model_name, p.risk_score);
}

std::vector<ExpertPrediction> predictions_for(const std::vector<ExpertPrediction>& all,
                                              const std::string& case_id) {
  std::vector<ExpertPrediction> out;
  for (const auto& p : all) {
    if (p.case_id == case_id) out.push_back(p);
  }
  return out;
}

}  // namespace prognos
