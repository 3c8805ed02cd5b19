#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "prognos/backend.hpp"

namespace prognos {

struct SlideManifest;

/// Feature-hashed bag-of-words embedding: every distinct lower-cased token
/// expands its seeded hash into a `dim`-vector of uniform [-1, 1) values;
/// token vectors are summed and the result L2-normalized. Pure function.
std::vector<float> mock_text_embedding(const std::string& text, int dim, std::uint64_t seed = 0);

/// Exact-lookup responses keyed by (template_id, vars_hash).
class FixtureSet {
 public:
  void add(const std::string& template_id, const PromptVars& vars, std::string response);
  void add_hashed(const std::string& template_id, const std::string& hash, std::string response);
  const std::string* find(const std::string& template_id, const std::string& hash) const;
  std::size_t size() const { return responses_.size(); }

  /// JSONL: `{"template_id", "vars": {...} | "vars_hash", "response"}` per line.
  static FixtureSet load(const fs::path& path);

 private:
  std::map<std::string, std::string> responses_;
};

/// Mock in fixture mode: a miss is an error (FixtureMiss).
class FixtureTransport : public ModelTransport {
 public:
  FixtureTransport(FixtureSet fixtures, int embed_dim, std::uint64_t seed = 0)
      : fixtures_(std::move(fixtures)), embed_dim_(embed_dim), seed_(seed) {}

  std::string complete(const CompletionCall& call) override;
  std::vector<float> embed(const std::string& text) override;

 private:
  FixtureSet fixtures_;
  int embed_dim_;
  std::uint64_t seed_;
};

/// Hidden metadata the synthetic oracle conditions on: per-patch tile
/// metadata and per-slide metadata from slide manifests.
class OracleRegistry {
 public:
  void add_patch(const std::string& patch_id, std::map<std::string, std::string> meta);
  void add_slide(const std::string& case_id, std::map<std::string, std::string> meta);
  /// Registers every tile's metadata plus the slide-level metadata stored on
  /// the level-3 composite (or the first tile when no composite exists).
  void ingest(const std::string& case_id, const SlideManifest& manifest);

  std::map<std::string, std::string> patch(const std::string& patch_id) const;
  std::map<std::string, std::string> slide(const std::string& case_id) const;

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, std::map<std::string, std::string>> patches_;
  std::map<std::string, std::map<std::string, std::string>> slides_;
};

/// Mock in synthetic-oracle mode: rule-based text generated from registry
/// metadata and the prompt variables. Deterministic per (template_id, vars).
class OracleTransport : public ModelTransport {
 public:
  OracleTransport(std::shared_ptr<const OracleRegistry> registry, int embed_dim,
                  std::uint64_t seed = 0)
      : registry_(std::move(registry)), embed_dim_(embed_dim), seed_(seed) {}

  std::string complete(const CompletionCall& call) override;
  std::vector<float> embed(const std::string& text) override;

 private:
  std::shared_ptr<const OracleRegistry> registry_;
  int embed_dim_;
  std::uint64_t seed_;
};

namespace oracle_rules {

/// Severity marker the synthetic generator plants in tumor tiles and the
/// oracle reads back when it estimates survival: index = kBase - kSlope * ln(t / 12).
inline constexpr double kMitoticBase = 20.0;
inline constexpr double kMitoticSlope = 6.0;

double mitotic_index_for_months(double months);
double months_for_mitotic_index(double index);

/// Largest "mitotic index <x>" value mentioned in `text`, if any.
std::optional<double> find_mitotic_index(const std::string& text);

}  // namespace oracle_rules

}  // namespace prognos
