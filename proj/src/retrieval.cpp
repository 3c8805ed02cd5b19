#include "prognos/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "prognos/error.hpp"

namespace prognos::retrieval {

RetrievalIndex build_index(const std::vector<BankEntry>& wsi_entries,
                           const std::vector<BankEntry>& gene_entries, Weights weights) {
  if (weights.wsi < 0.0 || weights.gene < 0.0 || std::abs(weights.wsi + weights.gene - 1.0) > 1e-9) {
    throw Error(ErrorCode::WeightsNotNormalized,
                fmt::format("weights ({}, {}) must be non-negative and sum to 1", weights.wsi, weights.gene));
  }
  std::map<std::string, const BankEntry*> w, g;
  for (const auto& e : wsi_entries) w.emplace(e.case_id, &e);
  for (const auto& e : gene_entries) g.emplace(e.case_id, &e);

  RetrievalIndex idx;
  idx.weights = weights;
  for (const auto& [id, e] : w) {
    auto it = g.find(id);
    if (it == g.end()) {
      idx.warnings.push_back(id + " has no gene bank entry, not indexed");
      continue;
    }
    idx.case_ids.push_back(id);
    idx.wsi.push_back(*e);
    idx.gene.push_back(*it->second);
  }
  for (const auto& [id, e] : g) {
    if (!w.count(id)) idx.warnings.push_back(id + " has no WSI bank entry, not indexed");
  }
  if (idx.empty()) throw Error(ErrorCode::NoOverlap, "the two banks share no case");
  return idx;
}

RetrievalIndex build_index(const bank::CaseBank& wsi, const bank::CaseBank& gene, Weights weights) {
  return build_index(wsi.entries(), gene.entries(), weights);
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch, fmt::format("cosine of {}-d and {}-d vectors", a.size(), b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

std::vector<RetrievedCase> retrieve(const std::vector<float>& test_wsi,
                                    const std::vector<float>& test_gene,
                                    const RetrievalIndex& index, std::size_t k,
                                    const std::set<std::string>& exclude) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "K must be at least 1");
  if (index.empty()) throw Error(ErrorCode::EmptyIndex, "empty retrieval index");
  std::vector<RetrievedCase> scored;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (exclude.count(index.case_ids[i])) continue;
    RetrievedCase r;
    r.case_id = index.case_ids[i];
    r.wsi_similarity = cosine(test_wsi, index.wsi[i].report_embedding);
    r.gene_similarity = cosine(test_gene, index.gene[i].report_embedding);
    r.score = index.weights.wsi * r.wsi_similarity + index.weights.gene * r.gene_similarity;
    r.wsi = &index.wsi[i];
    r.gene = &index.gene[i];
    scored.push_back(std::move(r));
  }
  const auto top = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(top), scored.end(),
                    [](const RetrievedCase& a, const RetrievedCase& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return a.case_id < b.case_id;
                    });
  scored.resize(top);
  return scored;
}

std::vector<RetrievedCase> retrieve(const Report& test_wsi, const Report& test_gene,
                                    const RetrievalIndex& index, AgentSession& session,
                                    std::size_t k, const std::set<std::string>& exclude) {
  if (index.empty()) throw Error(ErrorCode::EmptyIndex, "empty retrieval index");
  const auto ew = session.embed_text(test_wsi.text);
  const auto eg = session.embed_text(test_gene.text);
  return retrieve(ew, eg, index, k, exclude);
}

}  // namespace prognos::retrieval
