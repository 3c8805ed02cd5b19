#include "prognos/mock_backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "prognos/datamodel.hpp"
#include "prognos/error.hpp"
#include "prognos/hashing.hpp"
#include "prognos/manifest.hpp"
#include "prognos/prompt_ids.hpp"

namespace prognos {

std::vector<float> mock_text_embedding(const std::string& text, int dim, std::uint64_t seed) {
  std::set<std::string> tokens;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      tokens.insert(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.insert(cur);
  if (tokens.empty()) tokens.insert(text);

  std::vector<double> acc(static_cast<std::size_t>(dim), 0.0);
  for (const auto& tok : tokens) {
    std::uint64_t state = fnv1a64(tok) ^ (seed * 0x9E3779B97F4A7C15ULL);
    for (auto& a : acc) a += splitmix_unit(state) * 2.0 - 1.0;
  }
  double norm = 0.0;
  for (double a : acc) norm += a * a;
  norm = std::sqrt(norm);
  std::vector<float> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    out[i] = static_cast<float>(norm > 0.0 ? acc[i] / norm : 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixtures

void FixtureSet::add(const std::string& template_id, const PromptVars& vars, std::string response) {
  add_hashed(template_id, vars_hash(vars), std::move(response));
}

void FixtureSet::add_hashed(const std::string& template_id, const std::string& hash,
                            std::string response) {
  responses_[template_id + "#" + hash] = std::move(response);
}

const std::string* FixtureSet::find(const std::string& template_id, const std::string& hash) const {
  auto it = responses_.find(template_id + "#" + hash);
  return it == responses_.end() ? nullptr : &it->second;
}

FixtureSet FixtureSet::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open fixtures " + path.string());
  FixtureSet set;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto id = j.at("template_id").get<std::string>();
      auto response = j.at("response").get<std::string>();
      if (j.contains("vars")) {
        set.add(id, j.at("vars").get<PromptVars>(), std::move(response));
      } else {
        set.add_hashed(id, j.at("vars_hash").get<std::string>(), std::move(response));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return set;
}

std::string FixtureTransport::complete(const CompletionCall& call) {
  const std::string hash = vars_hash(call.variables);
  if (const std::string* r = fixtures_.find(call.template_id, hash)) return *r;
  throw Error(ErrorCode::FixtureMiss, call.template_id + " vars_hash=" + hash);
}

std::vector<float> FixtureTransport::embed(const std::string& text) {
  return mock_text_embedding(text, embed_dim_, seed_);
}

// ---------------------------------------------------------------------------
// Oracle registry

void OracleRegistry::add_patch(const std::string& patch_id, std::map<std::string, std::string> meta) {
  std::unique_lock lock(mu_);
  patches_[patch_id] = std::move(meta);
}

void OracleRegistry::add_slide(const std::string& case_id, std::map<std::string, std::string> meta) {
  std::unique_lock lock(mu_);
  slides_[case_id] = std::move(meta);
}

void OracleRegistry::ingest(const std::string& case_id, const SlideManifest& manifest) {
  for (const auto& level : manifest.levels) {
    for (const auto& t : level.tiles) {
      if (!t.meta.empty()) add_patch(t.patch_id, t.meta);
    }
  }
  add_slide(case_id, manifest.meta);
}

std::map<std::string, std::string> OracleRegistry::patch(const std::string& patch_id) const {
  std::shared_lock lock(mu_);
  auto it = patches_.find(patch_id);
  return it == patches_.end() ? std::map<std::string, std::string>{} : it->second;
}

std::map<std::string, std::string> OracleRegistry::slide(const std::string& case_id) const {
  std::shared_lock lock(mu_);
  auto it = slides_.find(case_id);
  return it == slides_.end() ? std::map<std::string, std::string>{} : it->second;
}

// ---------------------------------------------------------------------------
// Oracle rules

namespace oracle_rules {

double mitotic_index_for_months(double months) {
  return kMitoticBase - kMitoticSlope * std::log(months / 12.0);
}

double months_for_mitotic_index(double index) {
  return 12.0 * std::exp(-(index - kMitoticBase) / kMitoticSlope);
}

std::optional<double> find_mitotic_index(const std::string& text) {
  static const std::regex re(R"(mitotic index ([0-9]+(?:\.[0-9]+)?))", std::regex::icase);
  std::optional<double> best;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator();
       ++it) {
    const double v = std::stod((*it)[1].str());
    if (!best || v > *best) best = v;
  }
  return best;
}

}  // namespace oracle_rules

namespace {

using Meta = std::map<std::string, std::string>;

std::string get(const Meta& m, const std::string& key, const std::string& fallback = {}) {
  auto it = m.find(key);
  return it == m.end() ? fallback : it->second;
}

bool is_true(const Meta& m, const std::string& key) { return get(m, key) == "true"; }

std::string var(const CompletionCall& call, const std::string& key) {
  auto it = call.variables.find(key);
  return it == call.variables.end() ? std::string{} : it->second;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool contains(const std::string& haystack_lower, const std::string& needle) {
  return haystack_lower.find(needle) != std::string::npos;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    line = trim(line);
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::string describe_global(const Meta& slide) {
  std::string out;
  if (get(slide, "grade") == "high") {
    out = "Low-magnification overview: high-grade carcinoma with dense, irregular sheets of "
          "atypical cells and desmoplastic stroma.";
  } else if (get(slide, "grade") == "low") {
    out = "Low-magnification overview: low-grade carcinoma with orderly papillary architecture.";
  } else {
    out = "Low-magnification overview: tissue section with carcinoma of indeterminate grade.";
  }
  if (const auto depth = get(slide, "depth"); !depth.empty()) {
    out += " The tumor front appears to reach the " + depth + ".";
  }
  return out;
}

std::string describe_tissue(const Meta& patch, const Meta& slide) {
  const std::string tissue = get(patch, "tissue", "stroma");
  std::string out;
  if (tissue == "tumor") {
    const std::string grade = get(patch, "grade", get(slide, "grade", "intermediate"));
    out = grade + "-grade carcinoma arranged in " + get(patch, "pattern", "solid nests") +
          " with nuclear pleomorphism";
    if (const auto mi = get(patch, "mitotic_index"); !mi.empty()) {
      out += "; mitotic index " + mi + " per 10 HPF";
    }
    out += ".";
  } else if (tissue == "necrosis") {
    out = "Geographic tumor necrosis involving approximately " +
          get(slide, "necrosis_pct", "10") + "% of the tumor area.";
  } else if (tissue == "nerve") {
    out = is_true(slide, "perineural")
              ? "Tumor cells encircle a nerve bundle, consistent with perineural invasion."
              : "Unremarkable peripheral nerve twig without tumor involvement.";
  } else if (tissue == "vessel") {
    out = is_true(slide, "lvi") ? "Tumor emboli within lymphovascular spaces."
                                : "Thin-walled vessels without tumor emboli.";
  } else if (tissue == "muscle") {
    out = "Tumor cells infiltrate the " + get(slide, "depth", "lamina propria") + ".";
  } else if (tissue == "lymphoid") {
    out = get(slide, "lymphocytes", "moderate") + " lymphocytic infiltration of the tumor stroma.";
  } else if (tissue == "spindle") {
    out = "Predominantly spindle-shaped cells with elongated nuclei and mitotic figures.";
  } else {
    out = "Desmoplastic fibrous stroma with scattered fibroblasts.";
  }
  if (const auto lesion = get(patch, "lesion"); !lesion.empty()) {
    out += " Morphology consistent with " + lesion + " differentiation.";
  }
  if (is_true(patch, "ambiguous")) {
    out += " Cellular detail is ambiguous at this magnification.";
  }
  return out;
}

std::string extract_value(const std::string& key_lower, const std::string& reports_lower) {
  auto present = [&](const std::string& needle) {
    return contains(reports_lower, needle) ? std::string("present") : std::string(kNotAssessed);
  };
  if (contains(key_lower, "variant")) {
    for (const char* v : {"sarcomatoid", "micropapillary", "plasmacytoid", "nested", "squamous",
                          "glandular"}) {
      if (contains(reports_lower, v)) return v;
    }
    return std::string(kNotAssessed);
  }
  for (const char* v : {"micropapillary", "plasmacytoid", "sarcomatoid", "squamous", "glandular"}) {
    if (contains(key_lower, v)) return present(v);
  }
  if (contains(key_lower, "in situ")) return present("carcinoma in situ");
  if (contains(key_lower, "lymphovascular")) return present("tumor emboli within lymphovascular");
  if (contains(key_lower, "perineural")) return present("perineural invasion");
  if (contains(key_lower, "lymph node")) return present("lymph node metastasis");
  if (contains(key_lower, "lymphocytic")) {
    for (const char* v : {"brisk", "moderate", "sparse"}) {
      if (contains(reports_lower, std::string(v) + " lymphocytic")) return v;
    }
    return std::string(kNotAssessed);
  }
  if (contains(key_lower, "necrosis")) {
    static const std::regex re(R"(necrosis involving approximately ([0-9]+)%)");
    std::smatch m;
    if (std::regex_search(reports_lower, m, re)) return m[1].str() + "%";
    return std::string(kNotAssessed);
  }
  if (contains(key_lower, "depth")) {
    if (contains(reports_lower, "infiltrate the muscularis propria")) return "invades muscularis propria";
    if (contains(reports_lower, "infiltrate the lamina propria")) return "limited to lamina propria";
    return std::string(kNotAssessed);
  }
  if (contains(key_lower, "morphology")) {
    if (auto mi = oracle_rules::find_mitotic_index(reports_lower)) {
      return fmt::format("pleomorphic carcinoma, mitotic index {:.1f} per 10 HPF", *mi);
    }
    return contains(reports_lower, "carcinoma") ? "carcinoma" : std::string(kNotAssessed);
  }
  if (contains(key_lower, "grade")) {
    if (contains(reports_lower, "high-grade")) return "high-grade";
    if (contains(reports_lower, "low-grade")) return "low-grade";
    return std::string(kNotAssessed);
  }
  return std::string(kNotAssessed);
}

std::vector<std::string> evidence_fragments(const std::string& report) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : report) {
    if (c == ';' || c == '\n' || c == '|') {
      cur = trim(cur);
      if (cur.size() > 8) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cur = trim(cur);
  if (cur.size() > 8) out.push_back(cur);
  if (out.size() > 3) out.resize(3);
  if (out.empty()) out.push_back("limited findings in the summarized report");
  return out;
}

struct GeneLine {
  std::string symbol;
  double expression = 0.0;
  bool mutated = false;
};

std::vector<GeneLine> parse_gene_lines(const std::string& text) {
  std::vector<GeneLine> out;
  for (const auto& line : lines_of(text)) {
    std::stringstream ss(line);
    GeneLine g;
    std::string expr, mut;
    if (!std::getline(ss, g.symbol, '\t') || !std::getline(ss, expr, '\t') ||
        !std::getline(ss, mut, '\t')) {
      continue;
    }
    try {
      g.expression = std::stod(expr);
    } catch (const std::exception&) {
      continue;
    }
    g.mutated = mut == "1" || mut == "mutated";
    out.push_back(std::move(g));
  }
  return out;
}

std::string oracle_answer(const CompletionCall& call, const OracleRegistry& reg) {
  const std::string& id = call.template_id;
  const std::string case_id = var(call, "case_id");

  if (id == prompt_ids::kWsiGlobal) {
    return describe_global(reg.slide(case_id));
  }
  if (id == prompt_ids::kWsiPatchBrief || id == prompt_ids::kWsiPatchDetail) {
    const std::string patch_id = var(call, "patch_id");
    const std::string body = describe_tissue(reg.patch(patch_id), reg.slide(case_id));
    if (id == prompt_ids::kWsiPatchBrief) {
      return "x" + var(call, "magnification") + " patch " + patch_id + ": " + body;
    }
    return "Detailed x" + var(call, "magnification") + " report for patch " + patch_id + ": " +
           body + " No additional architectural abnormality is identified.";
  }
  if (id == prompt_ids::kWsiConfidence) {
    return is_true(reg.patch(var(call, "patch_id")), "ambiguous") ? "Confidence: low"
                                                                  : "Confidence: high";
  }
  if (id == prompt_ids::kWsiExtract) {
    const std::string reports = lower(var(call, "reports"));
    std::string out;
    for (const auto& key : lines_of(var(call, "checklist"))) {
      out += key + ": " + extract_value(lower(key), reports) + "\n";
    }
    const auto first_stop = reports.find('.');
    out += "Summary: " + (first_stop == std::string::npos ? reports : reports.substr(0, first_stop)) +
           "\n";
    return out;
  }
  if (id == prompt_ids::kWsiSummarize) {
    std::vector<std::string> parts;
    for (const auto& line : lines_of(var(call, "structured"))) {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      const std::string key = lower(trim(line.substr(0, colon)));
      const std::string value = trim(line.substr(colon + 1));
      if (key == "summary" || value == kNotAssessed) continue;
      parts.push_back(key + " " + value);
    }
    if (parts.empty()) return "No assessable prognostic attributes were identified on this slide.";
    std::string out = "WSI summary: ";
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "; " : "") + parts[i];
    return out + ".";
  }
  if (id == prompt_ids::kGeneSelect) {
    auto genes = parse_gene_lines(var(call, "genes"));
    std::stable_sort(genes.begin(), genes.end(), [](const GeneLine& a, const GeneLine& b) {
      if (a.mutated != b.mutated) return a.mutated;
      return std::abs(a.expression) > std::abs(b.expression);
    });
    std::size_t k = 3;
    try {
      k = std::min<std::size_t>(k, static_cast<std::size_t>(std::stoul(var(call, "max_k"))));
    } catch (const std::exception&) {
    }
    std::string out = "Selected genes: ";
    for (std::size_t i = 0; i < std::min(k, genes.size()); ++i) {
      out += (i ? ", " : "") + genes[i].symbol;
    }
    return out;
  }
  if (id == prompt_ids::kGeneCategoryReport) {
    const auto genes = parse_gene_lines(var(call, "selected"));
    std::string out = var(call, "category") + ": " + var(call, "stats") + ". Key genes: ";
    for (std::size_t i = 0; i < genes.size(); ++i) {
      out += (i ? ", " : "") +
             fmt::format("{} ({}; expression {:.2f}, {})", genes[i].symbol,
                         genes[i].mutated ? "altered" : "wild-type", genes[i].expression,
                         genes[i].expression >= 0 ? "upregulated" : "downregulated");
    }
    return out + ".";
  }
  if (id == prompt_ids::kGeneSummarize) {
    std::string out = "Genomic summary:";
    for (const auto& line : lines_of(var(call, "category_reports"))) {
      if (line.rfind("No genes", 0) == 0) continue;
      out += " " + line;
    }
    return out;
  }
  if (id == prompt_ids::kCotGenerate) {
    std::string out = "Risk level: " + var(call, "stratum") + "\nKey evidence:\n";
    for (const auto& e : evidence_fragments(var(call, "report"))) out += "- " + e + "\n";
    out += "Uncertainty: " + var(call, "modality") +
           " findings are summarized from sampled regions; focal lesions may be missed.\n";
    out += "Reasoning: The observed survival of " + var(call, "survival_months") +
           " months places this patient in the " + var(call, "stratum") +
           " stratum, and the evidence above is consistent with that course.\n";
    return out;
  }
  if (id == prompt_ids::kCotCritique) {
    const std::string cot = var(call, "cot");
    if (cot.find("[revised]") != std::string::npos) return "quality: high\ncritique: none";
    if (fnv1a64(case_id + "/" + var(call, "modality")) % 3 == 0) {
      return "quality: low\ncritique: the key evidence does not weigh the most adverse finding "
             "explicitly.";
    }
    return "quality: high\ncritique: none";
  }
  if (id == prompt_ids::kCotRefine) {
    std::string cot = var(call, "cot");
    const auto pos = cot.find("Reasoning:");
    const std::string note = "Reasoning: [revised] The most adverse finding is weighed first. ";
    if (pos == std::string::npos) {
      cot += "\n" + note;
    } else {
      cot.replace(pos, std::string("Reasoning: ").size(), note);
    }
    return cot;
  }
  if (id == prompt_ids::kInferDichotomy || id == prompt_ids::kInferTime) {
    const auto mi = oracle_rules::find_mitotic_index(var(call, "wsi_report"));
    if (!mi) return "The available evidence is insufficient for a confident decision.";
    const double est = oracle_rules::months_for_mitotic_index(*mi);
    if (id == prompt_ids::kInferTime) return fmt::format("Predicted survival: {:.2f} months", est);
    if (var(call, "level") == "1") return est < 24.0 ? "Answer: 1" : "Answer: 2";
    return "Answer: " + interval_label(interval_of(stratum_for_time(est)));
  }
  throw Error(ErrorCode::UnknownTemplate, "oracle has no rule for " + id);
}

}  // namespace

std::string OracleTransport::complete(const CompletionCall& call) {
  static const OracleRegistry kEmpty;
  return oracle_answer(call, registry_ ? *registry_ : kEmpty);
}

std::vector<float> OracleTransport::embed(const std::string& text) {
  return mock_text_embedding(text, embed_dim_, seed_);
}

}  // namespace prognos
