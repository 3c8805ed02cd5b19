#include "prognos/datamodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "prognos/error.hpp"
#include "prognos/manifest.hpp"

namespace prognos {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Parse: return "ParseFailure";
    case ErrorCode::UnknownTemplate: return "UnknownTemplate";
    case ErrorCode::UnboundPlaceholder: return "UnboundPlaceholder";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::Upstream: return "UpstreamError";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::FixtureMiss: return "FixtureMiss";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::BadThreshold: return "BadThreshold";
    case ErrorCode::MissingLevelImage: return "MissingLevelImage";
    case ErrorCode::MissingSubTiles: return "MissingSubTiles";
    case ErrorCode::EmptyCategory: return "EmptyCategory";
    case ErrorCode::AllCategoriesEmpty: return "AllCategoriesEmpty";
    case ErrorCode::DuplicateEntry: return "DuplicateEntry";
    case ErrorCode::CorruptBank: return "CorruptBank";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::WeightsNotNormalized: return "WeightsNotNormalized";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::TooFewScores: return "TooFewScores";
    case ErrorCode::NonPositiveTime: return "NonPositiveTime";
    case ErrorCode::MissingExpertPredictions: return "MissingExpertPredictions";
    case ErrorCode::Leakage: return "Leakage";
    case ErrorCode::NoComparablePairs: return "NoComparablePairs";
    case ErrorCode::NoEvents: return "NoEvents";
    case ErrorCode::DegenerateSplit: return "DegenerateSplit";
    case ErrorCode::TooFewCases: return "TooFewCases";
  }
  return "Unknown";
}

// ---------------------------------------------------------------------------

Interval interval_of(RiskStratum s) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (s) {
    case RiskStratum::High: return {0.0, 12.0};
    case RiskStratum::HighIntermediate: return {12.0, 24.0};
    case RiskStratum::LowIntermediate: return {24.0, 36.0};
    case RiskStratum::Low: return {36.0, inf};
  }
  return {36.0, inf};
}

RiskStratum stratum_for_time(double months) {
  if (!std::isfinite(months) || months < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "survival time must be finite and >= 0");
  }
  for (RiskStratum s : kAllStrata) {
    if (interval_of(s).contains(months)) return s;
  }
  return RiskStratum::Low;
}

std::string_view to_string(RiskStratum s) {
  switch (s) {
    case RiskStratum::High: return "High";
    case RiskStratum::HighIntermediate: return "High-intermediate";
    case RiskStratum::LowIntermediate: return "Low-intermediate";
    case RiskStratum::Low: return "Low";
  }
  return "Low";
}

namespace {

std::string squash(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

}  // namespace

std::optional<RiskStratum> parse_stratum(std::string_view text) {
  const std::string s = squash(text);
  if (s == "high" || s == "highrisk") return RiskStratum::High;
  if (s == "highintermediate" || s == "highintermediaterisk") return RiskStratum::HighIntermediate;
  if (s == "lowintermediate" || s == "lowintermediaterisk") return RiskStratum::LowIntermediate;
  if (s == "low" || s == "lowrisk") return RiskStratum::Low;
  return std::nullopt;
}

std::string interval_label(const Interval& iv) {
  std::ostringstream os;
  os << iv.lo;
  if (iv.bounded()) {
    os << '-' << iv.hi;
  } else {
    os << '+';
  }
  return os.str();
}

int level_for(Magnification m) {
  switch (m) {
    case Magnification::X2_5: return 3;
    case Magnification::X10: return 2;
    case Magnification::X20: return 1;
  }
  return 2;
}

Magnification magnification_for_level(int level) {
  switch (level) {
    case 3: return Magnification::X2_5;
    case 2: return Magnification::X10;
    case 1: return Magnification::X20;
    default:
      throw Error(ErrorCode::InvalidArgument, "no magnification for pyramid level " +
                                                  std::to_string(level));
  }
}

double magnification_value(Magnification m) {
  switch (m) {
    case Magnification::X2_5: return 2.5;
    case Magnification::X10: return 10.0;
    case Magnification::X20: return 20.0;
  }
  return 10.0;
}

std::optional<Magnification> magnification_from_value(double value) {
  if (std::abs(value - 2.5) < 1e-9) return Magnification::X2_5;
  if (std::abs(value - 10.0) < 1e-9) return Magnification::X10;
  if (std::abs(value - 20.0) < 1e-9) return Magnification::X20;
  return std::nullopt;
}

std::string_view to_string(ReportSource s) {
  switch (s) {
    case ReportSource::Global: return "Global";
    case ReportSource::Mag10: return "Mag10";
    case ReportSource::Mag20: return "Mag20";
    case ReportSource::WsiSummary: return "WsiSummary";
    case ReportSource::GeneCategory: return "GeneCategory";
    case ReportSource::GeneSummary: return "GeneSummary";
    case ReportSource::Reasoning: return "Reasoning";
  }
  return "Global";
}

std::string_view to_string(Confidence c) {
  switch (c) {
    case Confidence::Low: return "low";
    case Confidence::Medium: return "medium";
    case Confidence::High: return "high";
  }
  return "medium";
}

std::string_view to_string(CotQuality q) { return q == CotQuality::High ? "high" : "low"; }
std::string_view to_string(Modality m) { return m == Modality::Wsi ? "WSI" : "Gene"; }

bool Report::has_flag(std::string_view f) const {
  return std::find(flags.begin(), flags.end(), f) != flags.end();
}

void Report::add_flag(std::string f) {
  if (!has_flag(f)) flags.push_back(std::move(f));
}

void check_report(const Report& r) {
  if (r.text.empty()) throw Error(ErrorCode::InvalidArgument, "report text is empty");
  if (r.confidence && r.source != ReportSource::Mag10 && r.source != ReportSource::Mag20) {
    throw Error(ErrorCode::InvalidArgument,
                "confidence is only defined for x10 / x20 patch reports");
  }
}

bool StructuredWsiReport::all_not_assessed() const {
  return std::all_of(attributes.begin(), attributes.end(),
                     [](const auto& kv) { return kv.second == kNotAssessed; });
}

const std::string* StructuredWsiReport::find(std::string_view key) const {
  for (const auto& [k, v] : attributes) {
    if (k == key) return &v;
  }
  return nullptr;
}

std::string_view to_string(GeneCategory c) {
  switch (c) {
    case GeneCategory::TumorSuppressor: return "TumorSuppressor";
    case GeneCategory::Oncogene: return "Oncogene";
    case GeneCategory::ProteinKinase: return "ProteinKinase";
    case GeneCategory::DifferentiationMarker: return "DifferentiationMarker";
    case GeneCategory::TranscriptionFactor: return "TranscriptionFactor";
    case GeneCategory::CytokineGrowthFactor: return "CytokineGrowthFactor";
  }
  return "TumorSuppressor";
}

std::string_view display_name(GeneCategory c) {
  switch (c) {
    case GeneCategory::TumorSuppressor: return "Tumor Suppressor Genes";
    case GeneCategory::Oncogene: return "Oncogenes";
    case GeneCategory::ProteinKinase: return "Protein Kinases";
    case GeneCategory::DifferentiationMarker: return "Cell Differentiation Markers";
    case GeneCategory::TranscriptionFactor: return "Transcription Factors";
    case GeneCategory::CytokineGrowthFactor: return "Cytokines and Growth Factors";
  }
  return "";
}

std::optional<GeneCategory> parse_gene_category(std::string_view name) {
  for (GeneCategory c : kAllGeneCategories) {
    if (name == to_string(c)) return c;
  }
  return std::nullopt;
}

std::string_view to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::IOViolation: return "IOViolation";
    case ViolationKind::NegativeTime: return "NegativeTime";
    case ViolationKind::NonFiniteTime: return "NonFiniteTime";
    case ViolationKind::EmptyCaseId: return "EmptyCaseId";
    case ViolationKind::DuplicateSymbol: return "DuplicateSymbol";
    case ViolationKind::NonFiniteExpression: return "NonFiniteExpression";
    case ViolationKind::BadLevelMapping: return "BadLevelMapping";
    case ViolationKind::EmbeddingNotUnit: return "EmbeddingNotUnit";
    case ViolationKind::AttentionOutOfRange: return "AttentionOutOfRange";
  }
  return "Unknown";
}

double l2_norm(const std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

bool is_unit(const std::vector<float>& v, double tol) {
  return !v.empty() && std::abs(l2_norm(v) - 1.0) <= tol;
}

std::vector<float> normalized(std::vector<float> v) {
  const double n = l2_norm(v);
  if (n == 0.0) return v;
  for (float& x : v) x = static_cast<float>(x / n);
  return v;
}

// ---------------------------------------------------------------------------
// Gene profile TSV.

namespace {

// Rows are kept even when invalid so validation can report them.
GeneProfile parse_gene_tsv(std::istream& in, const std::string& origin) {
  GeneProfile profile;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (lineno == 1 && !cols.empty() && cols[0] == "symbol") continue;
    if (cols.size() != 3) {
      throw Error(ErrorCode::Parse, origin + ":" + std::to_string(lineno) +
                                        ": expected 3 tab-separated columns");
    }
    GeneRecord g;
    g.symbol = cols[0];
    try {
      std::size_t used = 0;
      g.expression = std::stod(cols[1], &used);
      if (used != cols[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      if (cols[1] == "nan" || cols[1] == "NaN" || cols[1] == "inf") {
        g.expression = std::numeric_limits<double>::quiet_NaN();
      } else {
        throw Error(ErrorCode::Parse, origin + ":" + std::to_string(lineno) + ": bad expression");
      }
    }
    if (cols[2] != "0" && cols[2] != "1") {
      throw Error(ErrorCode::Parse, origin + ":" + std::to_string(lineno) + ": mutated must be 0|1");
    }
    g.mutated = cols[2] == "1";
    profile.genes.push_back(std::move(g));
  }
  return profile;
}

}  // namespace

GeneProfile load_gene_profile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open gene profile " + path.string());
  return parse_gene_tsv(in, path.string());
}

void save_gene_profile(const GeneProfile& profile, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write gene profile " + path.string());
  out << "symbol\texpression\tmutated\n";
  out.precision(17);
  for (const auto& g : profile.genes) {
    out << g.symbol << '\t' << g.expression << '\t' << (g.mutated ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Validation.

std::vector<Violation> validate_case(const CaseRecord& c) {
  std::vector<Violation> out;
  if (c.case_id.empty()) out.push_back({ViolationKind::EmptyCaseId, "case_id is empty"});
  if (c.label) {
    if (!std::isfinite(c.label->time_months)) {
      out.push_back({ViolationKind::NonFiniteTime, c.case_id});
    } else if (c.label->time_months < 0.0) {
      out.push_back({ViolationKind::NegativeTime, c.case_id});
    }
  }

  try {
    const GeneProfile profile = load_gene_profile(c.gene_profile);
    std::set<std::string> seen;
    for (const auto& g : profile.genes) {
      if (!seen.insert(g.symbol).second) {
        out.push_back({ViolationKind::DuplicateSymbol, g.symbol});
      }
      if (!std::isfinite(g.expression)) {
        out.push_back({ViolationKind::NonFiniteExpression, g.symbol});
      }
    }
  } catch (const std::exception& e) {
    out.push_back({ViolationKind::IOViolation, e.what()});
  }

  try {
    const SlideManifest m = load_slide_manifest(c.slide_manifest);
    for (const auto& level : m.levels) {
      if (level_for(level.magnification) != level.level) {
        out.push_back({ViolationKind::BadLevelMapping, "level " + std::to_string(level.level)});
      }
      for (const auto& t : level.tiles) {
        if (!t.embedding.empty() && !is_unit(t.embedding)) {
          out.push_back({ViolationKind::EmbeddingNotUnit, t.patch_id});
        }
        if (t.attention && (*t.attention < 0.0 || *t.attention > 1.0)) {
          out.push_back({ViolationKind::AttentionOutOfRange, t.patch_id});
        }
      }
    }
  } catch (const std::exception& e) {
    out.push_back({ViolationKind::IOViolation, e.what()});
  }
  return out;
}

std::vector<Violation> validate_cohort(const std::vector<CaseRecord>& cases) {
  std::vector<Violation> out;
  std::set<std::string> ids;
  for (const auto& c : cases) {
    if (!ids.insert(c.case_id).second) {
      out.push_back({ViolationKind::EmptyCaseId, "duplicate case_id " + c.case_id});
    }
    for (auto& v : validate_case(c)) out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON.

using nlohmann::json;

void to_json(json& j, const SurvivalLabel& v) {
  j = json{{"time_months", v.time_months}, {"event", v.event}};
}
void from_json(const json& j, SurvivalLabel& v) {
  j.at("time_months").get_to(v.time_months);
  j.at("event").get_to(v.event);
}

void to_json(json& j, const Interval& v) {
  j = json{{"lo", v.lo}, {"hi", v.bounded() ? json(v.hi) : json(nullptr)}};
}
void from_json(const json& j, Interval& v) {
  j.at("lo").get_to(v.lo);
  v.hi = j.at("hi").is_null() ? std::numeric_limits<double>::infinity() : j.at("hi").get<double>();
}

void to_json(json& j, const PatchRecord& v) {
  j = json{{"patch_id", v.patch_id}, {"level", v.level},     {"magnification", v.magnification},
           {"x", v.x},               {"y", v.y},             {"width", v.width},
           {"height", v.height},     {"image_ref", v.image_ref}, {"embedding", v.embedding}};
  if (v.attention) j["attention"] = *v.attention;
  if (!v.meta.empty()) j["meta"] = v.meta;
}
void from_json(const json& j, PatchRecord& v) {
  j.at("patch_id").get_to(v.patch_id);
  j.at("level").get_to(v.level);
  j.at("magnification").get_to(v.magnification);
  j.at("x").get_to(v.x);
  j.at("y").get_to(v.y);
  j.at("width").get_to(v.width);
  j.at("height").get_to(v.height);
  j.at("image_ref").get_to(v.image_ref);
  v.embedding = j.value("embedding", std::vector<float>{});
  v.attention.reset();
  if (j.contains("attention") && !j.at("attention").is_null()) v.attention = j.at("attention").get<double>();
  v.meta = j.value("meta", std::map<std::string, std::string>{});
}

void to_json(json& j, const Report& v) {
  j = json{{"text", v.text}, {"source", v.source}, {"subject_id", v.subject_id}};
  if (v.confidence) j["confidence"] = *v.confidence;
  if (!v.flags.empty()) j["flags"] = v.flags;
}
void from_json(const json& j, Report& v) {
  j.at("text").get_to(v.text);
  j.at("source").get_to(v.source);
  j.at("subject_id").get_to(v.subject_id);
  v.confidence.reset();
  if (j.contains("confidence")) v.confidence = j.at("confidence").get<Confidence>();
  v.flags = j.value("flags", std::vector<std::string>{});
}

void to_json(json& j, const StructuredWsiReport& v) {
  json attrs = json::array();
  for (const auto& [k, val] : v.attributes) attrs.push_back(json::array({k, val}));
  j = json{{"attributes", attrs}, {"summary", v.summary}};
}
void from_json(const json& j, StructuredWsiReport& v) {
  v.attributes.clear();
  for (const auto& kv : j.at("attributes")) {
    v.attributes.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
  }
  j.at("summary").get_to(v.summary);
}

void to_json(json& j, const GeneRecord& v) {
  j = json{{"symbol", v.symbol}, {"expression", v.expression}, {"mutated", v.mutated}};
}
void from_json(const json& j, GeneRecord& v) {
  j.at("symbol").get_to(v.symbol);
  j.at("expression").get_to(v.expression);
  j.at("mutated").get_to(v.mutated);
}

void to_json(json& j, const GeneProfile& v) { j = json{{"genes", v.genes}}; }
void from_json(const json& j, GeneProfile& v) { j.at("genes").get_to(v.genes); }

void to_json(json& j, const GeneCategoryStats& v) {
  j = json{{"category", v.category},
           {"mean", v.mean},
           {"median", v.median},
           {"mutation_ratio", v.mutation_ratio},
           {"n_genes", v.n_genes}};
}
void from_json(const json& j, GeneCategoryStats& v) {
  j.at("category").get_to(v.category);
  j.at("mean").get_to(v.mean);
  j.at("median").get_to(v.median);
  j.at("mutation_ratio").get_to(v.mutation_ratio);
  j.at("n_genes").get_to(v.n_genes);
}

void to_json(json& j, const CoTRecord& v) {
  j = json{{"text", v.text},
           {"risk_level", v.risk_level},
           {"key_evidence", v.key_evidence},
           {"uncertainty", v.uncertainty},
           {"quality", v.quality},
           {"rounds", v.rounds},
           {"force_accept", v.force_accept},
           {"risk_forced", v.risk_forced},
           {"censored_stratum", v.censored_stratum}};
}
void from_json(const json& j, CoTRecord& v) {
  j.at("text").get_to(v.text);
  j.at("risk_level").get_to(v.risk_level);
  j.at("key_evidence").get_to(v.key_evidence);
  j.at("uncertainty").get_to(v.uncertainty);
  j.at("quality").get_to(v.quality);
  j.at("rounds").get_to(v.rounds);
  v.force_accept = j.value("force_accept", false);
  v.risk_forced = j.value("risk_forced", false);
  v.censored_stratum = j.value("censored_stratum", false);
}

void to_json(json& j, const BankEntry& v) {
  j = json{{"case_id", v.case_id},
           {"modality", v.modality},
           {"summarized_report", v.summarized_report},
           {"cot", v.cot},
           {"label", v.label},
           {"report_embedding", v.report_embedding}};
}
void from_json(const json& j, BankEntry& v) {
  j.at("case_id").get_to(v.case_id);
  j.at("modality").get_to(v.modality);
  j.at("summarized_report").get_to(v.summarized_report);
  j.at("cot").get_to(v.cot);
  j.at("label").get_to(v.label);
  v.report_embedding = j.value("report_embedding", std::vector<float>{});
}

void to_json(json& j, const ExpertPrediction& v) {
  j = json{{"case_id", v.case_id}, {"model_name", v.model_name}, {"risk_score", v.risk_score}};
}
void from_json(const json& j, ExpertPrediction& v) {
  j.at("case_id").get_to(v.case_id);
  j.at("model_name").get_to(v.model_name);
  j.at("risk_score").get_to(v.risk_score);
}

void to_json(json& j, const CaseRecord& v) {
  j = json{{"case_id", v.case_id},
           {"slide_manifest", v.slide_manifest.generic_string()},
           {"gene_profile", v.gene_profile.generic_string()}};
  if (v.label) j["label"] = *v.label;
  if (v.holdout) j["holdout"] = true;
}
void from_json(const json& j, CaseRecord& v) {
  j.at("case_id").get_to(v.case_id);
  v.slide_manifest = j.at("slide_manifest").get<std::string>();
  v.gene_profile = j.at("gene_profile").get<std::string>();
  v.label.reset();
  if (j.contains("label") && !j.at("label").is_null()) v.label = j.at("label").get<SurvivalLabel>();
  v.holdout = j.value("holdout", false);
}

void to_json(json& j, const InferenceResult& v) {
  j = json{{"case_id", v.case_id},
           {"y", v.y},
           {"final_stratum", v.final_stratum},
           {"final_interval", v.final_interval},
           {"predicted_months", v.predicted_months},
           {"risk_score", v.risk_score},
           {"wsi_report", v.wsi_report},
           {"gene_report", v.gene_report},
           {"reasoning_report", v.reasoning_report},
           {"retrieved_case_ids", v.retrieved_case_ids},
           {"flags", v.flags}};
}
void from_json(const json& j, InferenceResult& v) {
  j.at("case_id").get_to(v.case_id);
  j.at("y").get_to(v.y);
  j.at("final_stratum").get_to(v.final_stratum);
  j.at("final_interval").get_to(v.final_interval);
  j.at("predicted_months").get_to(v.predicted_months);
  j.at("risk_score").get_to(v.risk_score);
  j.at("wsi_report").get_to(v.wsi_report);
  j.at("gene_report").get_to(v.gene_report);
  j.at("reasoning_report").get_to(v.reasoning_report);
  j.at("retrieved_case_ids").get_to(v.retrieved_case_ids);
  v.flags = j.value("flags", std::vector<std::string>{});
}

}  // namespace prognos
