#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "prognos/backend.hpp"
#include "prognos/datamodel.hpp"
#include "prognos/manifest.hpp"

namespace prognos::wsi {

/// Symmetric n x n cosine similarities, unit diagonal.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  explicit SimilarityMatrix(std::size_t n) : n_(n), values_(n * n, 0.0) {
    for (std::size_t i = 0; i < n; ++i) values_[i * n + i] = 1.0;
  }

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
  /// Sets both (i, j) and (j, i).
  void set(std::size_t i, std::size_t j, double v) {
    values_[i * n_ + j] = v;
    values_[j * n_ + i] = v;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

enum class SelectionPolicy {
  Literal,  // keep i iff max_{j != i} S_ij < tau
  Greedy,   // scan in order, keep i iff max similarity to already-kept < tau
};

SelectionPolicy parse_policy(std::string_view name);
std::string_view to_string(SelectionPolicy p);

struct Region {
  std::string region_id;
  std::vector<std::string> patch_ids;  // input order
  PixelBox bbox;                       // level-2 pixel coordinates
};

struct GridPoint {
  double x = 0.0;
  double y = 0.0;
};

/// Density-based clustering in input order (Euclidean distance <= eps,
/// neighbourhoods include the point itself). Returns clusters in discovery
/// order, each as ascending point indices; noise is omitted. A border point
/// joins the first cluster that reaches it.
std::vector<std::vector<std::size_t>> dbscan(std::span<const GridPoint> points, double eps,
                                             std::size_t min_pts);

/// Attention cut: the value at ascending rank floor(percentile * n), so the
/// patches at or above it are the top (1 - percentile) share plus ties.
double attention_cut(std::vector<double> attention, double percentile);

/// Clusters high-attention patches on the patch-index grid (x / width,
/// y / height). Requires attention on every patch.
std::vector<Region> propose_regions(const std::vector<PatchRecord>& patches, double eps = 4.0,
                                    std::size_t min_pts = 10, double percentile = 0.9);

/// Throws DimensionMismatch for ragged input, InvalidArgument for non-unit vectors.
SimilarityMatrix pairwise_cosine(const std::vector<std::vector<float>>& vectors);

/// Ascending indices of the kept rows. `order` is only read by Greedy and
/// must then be a permutation of 0..n-1 (empty = identity).
std::vector<std::size_t> threshold_select(const SimilarityMatrix& s, double tau,
                                          SelectionPolicy policy,
                                          std::span<const std::size_t> order = {});

/// Descending attention, ties by index; missing attention counts as 0.
std::vector<std::size_t> attention_order(const std::vector<PatchRecord>& patches);

struct CosMiningResult {
  std::vector<std::size_t> visual_selected;
  std::vector<std::size_t> text_selected;
  std::vector<std::size_t> selected;  // intersection, ascending
};

/// Selection core: both criteria with one policy, then intersection.
CosMiningResult cos_mine_select(const SimilarityMatrix& visual, const SimilarityMatrix& text,
                                double tau_v, double tau_t, SelectionPolicy policy,
                                std::span<const std::size_t> order = {});

/// Full CoSMining: visual similarity from patch embeddings, textual from the
/// embedded preliminary reports (one per patch, same order).
CosMiningResult cos_mine(const std::vector<PatchRecord>& patches,
                         const std::vector<Report>& preliminary_reports, AgentSession& session,
                         double tau_v = 0.93, double tau_t = 0.93,
                         SelectionPolicy policy = SelectionPolicy::Literal);

std::optional<Confidence> parse_confidence(std::string_view answer);

/// Asks for Low / Medium / High on an x10 report and stores it on a copy of
/// the report. Two unparseable answers give Medium plus a "confidence_unparsed" flag.
Report assess_confidence(const Report& report, const std::string& case_id, AgentSession& session);

/// Global (x2.5) report from the level-3 composite. Throws MissingLevelImage.
Report lm_screen(const SlideManifest& manifest, const std::string& case_id, AgentSession& session);

/// Preliminary or detailed description of one patch.
Report describe_patch(const PatchRecord& patch, const std::string& case_id, bool detailed,
                      AgentSession& session, const Report* preliminary = nullptr);

struct ConfMiningResult {
  std::vector<PatchRecord> patches;  // P_20, union over parents
  std::vector<Report> reports;       // detailed Mag20 reports, same order
  std::vector<std::string> skipped_parents;
  std::vector<std::string> warnings;
};

ConfMiningResult conf_mine(const std::vector<PatchRecord>& low_conf_patches,
                           const SlideManifest& manifest, const std::string& case_id,
                           AgentSession& session, double tau_v = 0.93, double tau_t = 0.93,
                           SelectionPolicy policy = SelectionPolicy::Literal);

struct ExtractionResult {
  StructuredWsiReport structured;
  std::vector<std::string> warnings;
};

/// Parses a `Key: value` answer against the checklist. Returns nullopt when
/// no checklist key is present at all.
std::optional<ExtractionResult> parse_attributes(std::string_view answer,
                                                 const std::vector<std::string>& checklist);

ExtractionResult extract_attributes(const Report& global, const std::vector<Report>& mag10,
                                    const std::vector<Report>& mag20,
                                    const std::vector<std::string>& checklist,
                                    const std::string& case_id, AgentSession& session);

Report summarize_wsi(const StructuredWsiReport& structured, const std::string& case_id,
                     AgentSession& session);

/// Reads one attribute name per line; blank lines and `#` comments skipped.
std::vector<std::string> load_checklist(const fs::path& path);

struct WsiOptions {
  double tau_v = 0.93;
  double tau_t = 0.93;
  SelectionPolicy policy = SelectionPolicy::Literal;
  double dbscan_eps = 4.0;
  std::size_t dbscan_min_pts = 10;
  double attention_percentile = 0.9;
  std::size_t max_candidates = 32;
  std::vector<std::string> checklist;
  fs::path level3_dir;  // where synthesized composites go; empty = manifest dir
};

struct WsiAnalysis {
  Report global;
  std::vector<Region> regions;
  std::vector<std::string> candidate_ids;
  CosMiningResult cos;
  std::vector<Report> mag10;  // detailed reports of P_10 with confidence
  ConfMiningResult conf;
  StructuredWsiReport structured;
  Report summary;
  std::vector<std::string> warnings;
};

/// LMScreen -> region proposal -> CoSMining -> ConfMining -> checklist
/// extraction -> summary, for one slide.
WsiAnalysis analyze_wsi(SlideManifest manifest, const std::string& case_id,
                        const WsiOptions& options, AgentSession& session);

}  // namespace prognos::wsi
