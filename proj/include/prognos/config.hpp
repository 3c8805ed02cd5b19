#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "prognos/backend.hpp"
#include "prognos/wsi_pipeline.hpp"

namespace prognos {

/// Flat `key = value` run configuration (TOML subset: strings in double
/// quotes, numbers, true/false, `#` comments). Relative paths resolve
/// against the config file's directory.
struct RunConfig {
  fs::path source;  // the file this was read from

  fs::path cohort;
  fs::path experts;
  fs::path output_dir = "out";
  fs::path prompts_dir = "prompts";
  fs::path checklist = "resources/wsi_checklist.txt";
  fs::path gene_categories = "resources/gene_categories.json";
  fs::path gene_kb = "resources/gene_kb.json";

  BackendConfig backend;

  double tau_v = 0.93;
  double tau_t = 0.93;
  wsi::SelectionPolicy policy = wsi::SelectionPolicy::Literal;
  double dbscan_eps = 4.0;
  int dbscan_min_pts = 10;
  double attention_percentile = 0.9;
  int max_candidates = 32;
  int max_genes = 10;
  int max_refine_rounds = 3;

  int k = 3;
  int depth = 2;
  double w_wsi = 0.5;
  double w_gene = 0.5;

  std::uint64_t seed = 7;
  int folds = 5;
  int jobs = 4;

  /// Throws Error(InvalidArgument) naming the first broken invariant.
  void validate() const;
  /// Canonical `key = value` lines, sorted; the run manifest hashes this.
  std::string canonical() const;
  std::string hash() const;
};

/// Parses raw pairs. Throws Parse on malformed lines or duplicate keys.
std::map<std::string, std::string> parse_kv_config(const std::string& text,
                                                   const std::string& origin = "<config>");

/// Unknown keys are an error so typos do not silently fall back to defaults.
RunConfig load_run_config(const fs::path& path);

}  // namespace prognos
