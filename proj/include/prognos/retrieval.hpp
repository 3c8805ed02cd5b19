#pragma once

#include <set>
#include <string>
#include <vector>

#include "prognos/backend.hpp"
#include "prognos/cot_bank.hpp"
#include "prognos/datamodel.hpp"

namespace prognos::retrieval {

struct Weights {
  double wsi = 0.5;
  double gene = 0.5;
};

/// Cases present in both banks, rows sorted by case id. Immutable after build.
struct RetrievalIndex {
  std::vector<std::string> case_ids;
  std::vector<BankEntry> wsi;   // row-aligned with case_ids
  std::vector<BankEntry> gene;  // row-aligned with case_ids
  Weights weights;
  std::vector<std::string> warnings;  // cases dropped for a missing modality

  std::size_t size() const { return case_ids.size(); }
  bool empty() const { return case_ids.empty(); }
};

/// Throws WeightsNotNormalized (negative weight or sum != 1) and NoOverlap.
RetrievalIndex build_index(const std::vector<BankEntry>& wsi_entries,
                           const std::vector<BankEntry>& gene_entries, Weights weights = {});
RetrievalIndex build_index(const bank::CaseBank& wsi, const bank::CaseBank& gene, Weights weights = {});

double cosine(const std::vector<float>& a, const std::vector<float>& b);

struct RetrievedCase {
  std::string case_id;
  double score = 0.0;
  double wsi_similarity = 0.0;
  double gene_similarity = 0.0;
  const BankEntry* wsi = nullptr;   // points into the index
  const BankEntry* gene = nullptr;
};

/// Weighted sum of per-modality cosines, descending, ties by case id; at
/// most K results. Ids in `exclude` are never returned. Throws EmptyIndex on an
/// empty index; exclusions that leave nothing give an empty result.
std::vector<RetrievedCase> retrieve(const std::vector<float>& test_wsi,
                                    const std::vector<float>& test_gene,
                                    const RetrievalIndex& index, std::size_t k = 3,
                                    const std::set<std::string>& exclude = {});

/// Embeds the two summarized reports with the session's embedder first.
std::vector<RetrievedCase> retrieve(const Report& test_wsi, const Report& test_gene,
                                    const RetrievalIndex& index, AgentSession& session,
                                    std::size_t k = 3, const std::set<std::string>& exclude = {});

}  // namespace prognos::retrieval
