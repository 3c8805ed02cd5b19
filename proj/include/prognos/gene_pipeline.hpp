#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prognos/backend.hpp"
#include "prognos/datamodel.hpp"

namespace prognos::gene {

/// Gene symbol -> functional category. A symbol listed under two categories
/// keeps the first one; the conflict is recorded in `warnings`.
class CategoryMap {
 public:
  /// JSON: `[{"category": "TumorSuppressor", "genes": ["TP53", ...]}, ...]`,
  /// optionally wrapped as `{"categories": [...]}`.
  static CategoryMap load(const fs::path& path);
  static CategoryMap from_json(const nlohmann::json& j);

  void add(const std::string& symbol, GeneCategory category);
  std::optional<GeneCategory> find(const std::string& symbol) const;
  std::size_t size() const { return map_.size(); }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  std::map<std::string, GeneCategory> map_;
  std::vector<std::string> warnings_;
};

struct GeneAnnotation {
  std::string function_summary;
  std::vector<std::string> aliases;
};

/// Local annotation snapshot. `{"TP53": {"function_summary": "...", "aliases": [...]}}`.
class GeneKnowledgeBase {
 public:
  static GeneKnowledgeBase load(const fs::path& path);
  static GeneKnowledgeBase from_json(const nlohmann::json& j);

  void add(const std::string& symbol, GeneAnnotation a) { entries_[symbol] = std::move(a); }
  /// Total: unknown symbols give an empty summary and `found = false`.
  struct Lookup {
    std::string function_summary;
    bool found = false;
  };
  Lookup lookup(const std::string& symbol) const;

 private:
  std::map<std::string, GeneAnnotation> entries_;
};

inline constexpr std::size_t kCategoryCount = kAllGeneCategories.size();

std::size_t category_index(GeneCategory c);

struct Stratification {
  std::array<std::vector<GeneRecord>, kCategoryCount> subsets;  // kAllGeneCategories order
  std::vector<GeneRecord> spillover;                            // unmapped genes
  std::vector<std::string> warnings;

  const std::vector<GeneRecord>& of(GeneCategory c) const { return subsets[category_index(c)]; }
};

Stratification stratify(const GeneProfile& profile, const CategoryMap& cmap);

/// Mean, median (average of the two middle values for even n) and fraction
/// of mutated genes. Throws EmptyCategory.
GeneCategoryStats category_stats(GeneCategory category, const std::vector<GeneRecord>& subset);

std::string describe_stats(const GeneCategoryStats& s);

/// Population z-scores of expression within the subset (0 when sd = 0).
std::vector<double> expression_z(const std::vector<GeneRecord>& subset);

/// Top `max_k` symbols by |z|, ties broken by symbol.
std::vector<std::string> fallback_selection(const std::vector<GeneRecord>& subset, std::size_t max_k);

struct KeyGeneSelection {
  std::vector<std::string> symbols;
  bool fallback = false;
  std::vector<std::string> warnings;
};

/// Symbols named in the answer that belong to the subset, in answer order.
/// Other named symbols are reported through `dropped`.
std::vector<std::string> parse_gene_selection(std::string_view answer,
                                              const std::vector<GeneRecord>& subset,
                                              std::size_t max_k,
                                              std::vector<std::string>* dropped = nullptr);

KeyGeneSelection select_key_genes(const GeneCategoryStats& stats,
                                  const std::vector<GeneRecord>& subset,
                                  const GeneKnowledgeBase& kb, const std::string& case_id,
                                  AgentSession& session, std::size_t max_k = 10);

/// Placeholder report used for a category with no profiled genes.
Report placeholder_report(GeneCategory category, const std::string& case_id);

Report category_report(const GeneCategoryStats& stats, const std::vector<GeneRecord>& selected,
                       const GeneKnowledgeBase& kb, const std::string& case_id,
                       AgentSession& session);

/// Throws AllCategoriesEmpty when every report is a placeholder. The result
/// is flagged "low_information" when fewer than three categories had data.
Report summarize_gene(const std::vector<Report>& category_reports, const std::string& case_id,
                      AgentSession& session);

struct GeneAnalysis {
  Stratification strata;
  std::array<std::optional<GeneCategoryStats>, kCategoryCount> stats;
  std::array<KeyGeneSelection, kCategoryCount> selections;
  std::vector<Report> category_reports;  // kAllGeneCategories order, placeholders included
  Report summary;
  std::vector<std::string> warnings;
};

GeneAnalysis analyze_gene(const GeneProfile& profile, const CategoryMap& cmap,
                          const GeneKnowledgeBase& kb, const std::string& case_id,
                          AgentSession& session, std::size_t max_k = 10);

}  // namespace prognos::gene
