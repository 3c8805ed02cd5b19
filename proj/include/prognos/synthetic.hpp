#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "prognos/cohort.hpp"

namespace prognos::synth {

/// Controls for the synthetic cohort. Survival times are log-uniform in
/// [min_months, max_months]; censoring times uniform in [censor_lo, censor_hi].
struct SynthOptions {
  int n_cases = 25;
  int n_holdout = 5;  // the last n_holdout cases get `holdout: true`
  std::uint64_t seed = 7;
  std::string prefix = "SYN";
  double min_months = 2.0;
  double max_months = 110.0;
  double censor_lo = 12.0;
  double censor_hi = 160.0;
  double mitotic_noise = 0.3;  // sd of the slide-level severity marker noise
  double expert_noise = 0.5;   // sd added to -ln(t/12) per expert model
  int grid_cols = 12;
  int grid_rows = 10;
  int tile_px = 16;     // stored PNG side; manifest coordinates use 512 px tiles
  int visual_dim = 32;  // patch embedding dimension
};

inline constexpr std::array<const char*, 3> kExpertModels = {"MOTCat", "MCAT", "CCL"};

/// Gene symbols per category used by the generator; the shipped category map
/// covers exactly these.
const std::vector<std::pair<GeneCategory, std::vector<std::string>>>& gene_panel();

struct SynthCohort {
  Cohort cohort;
  std::vector<ExpertPrediction> experts;
  std::vector<double> true_months;  // uncensored event times, cohort order
};

/// Writes `cohort.json`, `experts.csv` and `cases/<id>/{slide/,genes.tsv}`
/// under `out_dir`. Deterministic per options.
SynthCohort generate(const fs::path& out_dir, const SynthOptions& options);

/// Flat config pointing at the generated cohort. `assets` holds prompts/ and
/// resources/; paths are written relative to `out_dir`.
void write_config(const fs::path& out_dir, const fs::path& assets, std::uint64_t seed,
                  const std::string& extra = {});

}  // namespace prognos::synth
