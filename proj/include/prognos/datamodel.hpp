#pragma once

#include <array>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace prognos {

namespace fs = std::filesystem;

// Conversion factor used when a cohort declares its times in days.
inline constexpr double kDaysPerMonth = 30.44;

struct SurvivalLabel {
  double time_months = 0.0;
  bool event = false;  // true = death observed, false = right-censored

  bool operator==(const SurvivalLabel&) const = default;
};

// ---------------------------------------------------------------------------
// Risk strata. Half-open month intervals [lo, hi), the last one unbounded.

enum class RiskStratum { High, HighIntermediate, LowIntermediate, Low };

inline constexpr std::array<RiskStratum, 4> kAllStrata = {
    RiskStratum::High, RiskStratum::HighIntermediate, RiskStratum::LowIntermediate,
    RiskStratum::Low};

struct Interval {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();

  bool contains(double t) const { return t >= lo && t < hi; }
  bool contains(const Interval& other) const { return other.lo >= lo && other.hi <= hi; }
  bool bounded() const { return hi != std::numeric_limits<double>::infinity(); }
  bool operator==(const Interval&) const = default;
};

Interval interval_of(RiskStratum s);
RiskStratum stratum_for_time(double months);
std::string_view to_string(RiskStratum s);
/// Accepts "High", "high-intermediate", "High intermediate", "LowIntermediate", ...
std::optional<RiskStratum> parse_stratum(std::string_view text);
/// "0-12", "12-24", "24-36", "36+".
std::string interval_label(const Interval& iv);

// ---------------------------------------------------------------------------
// Pyramid levels.

enum class Magnification { X2_5, X10, X20 };

int level_for(Magnification m);
Magnification magnification_for_level(int level);  // throws on unknown level
double magnification_value(Magnification m);
std::optional<Magnification> magnification_from_value(double value);

struct PatchRecord {
  std::string patch_id;
  int level = 2;
  Magnification magnification = Magnification::X10;
  long x = 0;
  long y = 0;
  long width = 0;
  long height = 0;
  std::string image_ref;
  std::vector<float> embedding;  // unit norm when present
  std::optional<double> attention;
  std::map<std::string, std::string> meta;  // free-form preprocessing metadata

  bool operator==(const PatchRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Reports.

enum class ReportSource { Global, Mag10, Mag20, WsiSummary, GeneCategory, GeneSummary, Reasoning };
enum class Confidence { Low, Medium, High };

std::string_view to_string(ReportSource s);
std::string_view to_string(Confidence c);

struct Report {
  std::string text;
  ReportSource source = ReportSource::Global;
  std::string subject_id;
  std::optional<Confidence> confidence;  // Mag10 / Mag20 only
  std::vector<std::string> flags;

  bool has_flag(std::string_view f) const;
  void add_flag(std::string f);
  bool operator==(const Report&) const = default;
};

/// Throws InvalidArgument when the report breaks a type invariant.
void check_report(const Report& r);

inline constexpr std::string_view kNotAssessed = "not assessed";

struct StructuredWsiReport {
  std::vector<std::pair<std::string, std::string>> attributes;  // checklist order
  std::string summary;

  bool all_not_assessed() const;
  const std::string* find(std::string_view key) const;
  bool operator==(const StructuredWsiReport&) const = default;
};

// ---------------------------------------------------------------------------
// Genomics.

struct GeneRecord {
  std::string symbol;
  double expression = 0.0;
  bool mutated = false;

  bool operator==(const GeneRecord&) const = default;
};

struct GeneProfile {
  std::vector<GeneRecord> genes;

  bool operator==(const GeneProfile&) const = default;
};

enum class GeneCategory {
  TumorSuppressor,
  Oncogene,
  ProteinKinase,
  DifferentiationMarker,
  TranscriptionFactor,
  CytokineGrowthFactor,
};

inline constexpr std::array<GeneCategory, 6> kAllGeneCategories = {
    GeneCategory::TumorSuppressor,       GeneCategory::Oncogene,
    GeneCategory::ProteinKinase,         GeneCategory::DifferentiationMarker,
    GeneCategory::TranscriptionFactor,   GeneCategory::CytokineGrowthFactor};

std::string_view to_string(GeneCategory c);
std::string_view display_name(GeneCategory c);
std::optional<GeneCategory> parse_gene_category(std::string_view name);

struct GeneCategoryStats {
  GeneCategory category = GeneCategory::TumorSuppressor;
  double mean = 0.0;
  double median = 0.0;
  double mutation_ratio = 0.0;
  int n_genes = 0;

  bool operator==(const GeneCategoryStats&) const = default;
};

// ---------------------------------------------------------------------------
// Chain-of-thought records and bank rows.

enum class CotQuality { Low, High };
enum class Modality { Wsi, Gene };

std::string_view to_string(CotQuality q);
std::string_view to_string(Modality m);

struct CoTRecord {
  std::string text;
  RiskStratum risk_level = RiskStratum::Low;
  std::vector<std::string> key_evidence;
  std::string uncertainty;
  CotQuality quality = CotQuality::Low;
  int rounds = 0;
  bool force_accept = false;      // refinement budget exhausted
  bool risk_forced = false;       // risk level hard-set to the label stratum
  bool censored_stratum = false;  // stratum derived from a censoring time

  bool operator==(const CoTRecord&) const = default;
};

struct BankEntry {
  std::string case_id;
  Modality modality = Modality::Wsi;
  Report summarized_report;
  CoTRecord cot;
  SurvivalLabel label;
  std::vector<float> report_embedding;

  bool operator==(const BankEntry&) const = default;
};

struct ExpertPrediction {
  std::string case_id;
  std::string model_name;
  double risk_score = 0.0;  // higher = worse prognosis

  bool operator==(const ExpertPrediction&) const = default;
};

struct CaseRecord {
  std::string case_id;
  fs::path slide_manifest;
  fs::path gene_profile;
  std::optional<SurvivalLabel> label;
  bool holdout = false;

  bool operator==(const CaseRecord&) const = default;
};

struct InferenceResult {
  std::string case_id;
  std::vector<int> y;  // dichotomy decisions, each in {1, 2}
  RiskStratum final_stratum = RiskStratum::Low;
  Interval final_interval;
  double predicted_months = 0.0;
  double risk_score = 0.0;
  Report wsi_report;
  Report gene_report;
  Report reasoning_report;
  std::vector<std::string> retrieved_case_ids;
  std::vector<std::string> flags;

  bool operator==(const InferenceResult&) const = default;
};

// ---------------------------------------------------------------------------
// Validation.

enum class ViolationKind {
  IOViolation,
  NegativeTime,
  NonFiniteTime,
  EmptyCaseId,
  DuplicateSymbol,
  NonFiniteExpression,
  BadLevelMapping,
  EmbeddingNotUnit,
  AttentionOutOfRange,
};

std::string_view to_string(ViolationKind k);

struct Violation {
  ViolationKind kind;
  std::string detail;
};

/// Checks a case's label and the files it references. Never throws for bad
/// data; unreadable or unparseable files become IOViolation entries.
std::vector<Violation> validate_case(const CaseRecord& c);

/// Checks a cohort-level invariant (case_id uniqueness) on top of validate_case.
std::vector<Violation> validate_cohort(const std::vector<CaseRecord>& cases);

double l2_norm(const std::vector<float>& v);
bool is_unit(const std::vector<float>& v, double tol = 1e-6);
std::vector<float> normalized(std::vector<float> v);

/// Gene profile TSV: `symbol<TAB>expression<TAB>mutated(0|1)`, optional header.
GeneProfile load_gene_profile(const fs::path& path);
void save_gene_profile(const GeneProfile& profile, const fs::path& path);

// ---------------------------------------------------------------------------
// JSON encoding for every domain type.

void to_json(nlohmann::json& j, const SurvivalLabel& v);
void from_json(const nlohmann::json& j, SurvivalLabel& v);
void to_json(nlohmann::json& j, const Interval& v);
void from_json(const nlohmann::json& j, Interval& v);
void to_json(nlohmann::json& j, const PatchRecord& v);
void from_json(const nlohmann::json& j, PatchRecord& v);
void to_json(nlohmann::json& j, const Report& v);
void from_json(const nlohmann::json& j, Report& v);
void to_json(nlohmann::json& j, const StructuredWsiReport& v);
void from_json(const nlohmann::json& j, StructuredWsiReport& v);
void to_json(nlohmann::json& j, const GeneRecord& v);
void from_json(const nlohmann::json& j, GeneRecord& v);
void to_json(nlohmann::json& j, const GeneProfile& v);
void from_json(const nlohmann::json& j, GeneProfile& v);
void to_json(nlohmann::json& j, const GeneCategoryStats& v);
void from_json(const nlohmann::json& j, GeneCategoryStats& v);
void to_json(nlohmann::json& j, const CoTRecord& v);
void from_json(const nlohmann::json& j, CoTRecord& v);
void to_json(nlohmann::json& j, const BankEntry& v);
void from_json(const nlohmann::json& j, BankEntry& v);
void to_json(nlohmann::json& j, const ExpertPrediction& v);
void from_json(const nlohmann::json& j, ExpertPrediction& v);
void to_json(nlohmann::json& j, const CaseRecord& v);
void from_json(const nlohmann::json& j, CaseRecord& v);
void to_json(nlohmann::json& j, const InferenceResult& v);
void from_json(const nlohmann::json& j, InferenceResult& v);

NLOHMANN_JSON_SERIALIZE_ENUM(RiskStratum, {{RiskStratum::High, "High"},
                                           {RiskStratum::HighIntermediate, "HighIntermediate"},
                                           {RiskStratum::LowIntermediate, "LowIntermediate"},
                                           {RiskStratum::Low, "Low"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ReportSource, {{ReportSource::Global, "Global"},
                                            {ReportSource::Mag10, "Mag10"},
                                            {ReportSource::Mag20, "Mag20"},
                                            {ReportSource::WsiSummary, "WsiSummary"},
                                            {ReportSource::GeneCategory, "GeneCategory"},
                                            {ReportSource::GeneSummary, "GeneSummary"},
                                            {ReportSource::Reasoning, "Reasoning"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Confidence, {{Confidence::Low, "Low"},
                                          {Confidence::Medium, "Medium"},
                                          {Confidence::High, "High"}})
NLOHMANN_JSON_SERIALIZE_ENUM(CotQuality, {{CotQuality::Low, "Low"}, {CotQuality::High, "High"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Modality, {{Modality::Wsi, "WSI"}, {Modality::Gene, "Gene"}})
NLOHMANN_JSON_SERIALIZE_ENUM(GeneCategory,
                             {{GeneCategory::TumorSuppressor, "TumorSuppressor"},
                              {GeneCategory::Oncogene, "Oncogene"},
                              {GeneCategory::ProteinKinase, "ProteinKinase"},
                              {GeneCategory::DifferentiationMarker, "DifferentiationMarker"},
                              {GeneCategory::TranscriptionFactor, "TranscriptionFactor"},
                              {GeneCategory::CytokineGrowthFactor, "CytokineGrowthFactor"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Magnification, {{Magnification::X2_5, 2.5},
                                             {Magnification::X10, 10.0},
                                             {Magnification::X20, 20.0}})

}  // namespace prognos
