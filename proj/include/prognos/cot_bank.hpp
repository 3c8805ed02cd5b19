#pragma once

#include <optional>
#include <string>
#include <vector>

#include "prognos/backend.hpp"
#include "prognos/datamodel.hpp"

namespace prognos::bank {

// ---------------------------------------------------------------------------
// Chain-of-thought generation and critique

/// Reads the `Risk level / Key evidence / Uncertainty` layout. Returns
/// nullopt without a parseable risk level or at least one evidence item.
std::optional<CoTRecord> parse_cot(std::string_view text);

/// Removes the label's month value from text shown to the critic.
std::string redact_label(std::string text, const SurvivalLabel& label);

/// Reverse reasoning from a summarized report to the known outcome. A risk
/// level that disagrees with the label stratum is regenerated once, then
/// hard-set with `risk_forced`. Throws Error(Parse) after two unusable answers.
CoTRecord generate_cot(const Report& report, const SurvivalLabel& label, Modality modality,
                       const std::string& case_id, AgentSession& session);

struct Critique {
  CotQuality quality = CotQuality::Low;
  std::string text;
};

std::optional<Critique> parse_critique(std::string_view answer);

/// The critic sees the report and the (already redacted) CoT only. Two
/// unparseable answers give (Low, "<unparseable>").
Critique critique_cot(const CoTRecord& cot, const Report& report, Modality modality,
                      const std::string& case_id, AgentSession& session);

/// Critique, refine, repeat. At most max_rounds refinements and
/// max_rounds + 1 critiques; an exhausted budget sets `force_accept`.
CoTRecord refine_loop(CoTRecord cot, const Report& report, const SurvivalLabel& label,
                      Modality modality, const std::string& case_id, AgentSession& session,
                      int max_rounds = 3);

// ---------------------------------------------------------------------------
// Persistent bank

inline constexpr int kBankSchemaVersion = 1;

/// Append-only JSONL bank (one entry per line, embedding replaced by its row
/// index) with a float32 sidecar at `<path>.vec` whose preamble carries
/// `{dim, count, sha256, schema_version, modality}`. One writer per file.
class CaseBank {
 public:
  /// Opens an existing bank or creates an empty one.
  static CaseBank open(const fs::path& path, Modality modality);
  /// Throws Io when missing, CorruptBank on checksum / count / row mismatch.
  static CaseBank load(const fs::path& path);

  static fs::path sidecar_path(const fs::path& path);

  /// Throws DuplicateEntry, DimensionMismatch, InvalidArgument (wrong modality).
  void append(BankEntry entry);

  Modality modality() const { return modality_; }
  std::size_t dim() const { return dim_; }
  const fs::path& path() const { return path_; }
  const std::vector<BankEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const BankEntry* find(const std::string& case_id) const;
  std::vector<std::string> case_ids() const;

 private:
  void write_sidecar() const;

  fs::path path_;
  Modality modality_ = Modality::Wsi;
  std::size_t dim_ = 0;
  std::vector<BankEntry> entries_;
};

/// Free-function spelling of CaseBank::append / CaseBank::load.
inline void append_entry(CaseBank& bank, BankEntry entry) { bank.append(std::move(entry)); }
inline CaseBank load_bank(const fs::path& path) { return CaseBank::load(path); }

/// Joint WSI-gene view keyed by case id: the pair of entries for each case
/// present in both banks, ascending by id.
struct JointEntry {
  const BankEntry* wsi = nullptr;
  const BankEntry* gene = nullptr;
};
std::vector<std::pair<std::string, JointEntry>> joint_view(const CaseBank& wsi, const CaseBank& gene);

}  // namespace prognos::bank
