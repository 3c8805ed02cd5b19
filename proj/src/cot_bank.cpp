#include "prognos/cot_bank.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "prognos/error.hpp"
#include "prognos/hashing.hpp"
#include "prognos/prompt_ids.hpp"
#include "prognos/text_parse.hpp"
#include "prognos/vector_file.hpp"

namespace prognos::bank {

namespace {

// Strips list bullets and markdown emphasis from the start of a line.
std::string strip_marker(const std::string& line) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == '-' || line[i] == '*' || line[i] == '#' || line[i] == ' ')) ++i;
  std::string out = line.substr(i);
  out.erase(std::remove(out.begin(), out.end(), '*'), out.end());
  return text::trim(out);
}

bool starts_with_key(const std::string& lower_line, std::string_view key) {
  return lower_line.rfind(key, 0) == 0;
}

std::string after_colon(const std::string& line) {
  const auto c = line.find(':');
  return c == std::string::npos ? std::string{} : text::trim(std::string_view(line).substr(c + 1));
}

std::optional<RiskStratum> stratum_from_value(std::string value) {
  if (auto p = value.find('('); p != std::string::npos) value.resize(p);
  while (!value.empty() && (value.back() == '.' || value.back() == ',')) value.pop_back();
  return parse_stratum(text::trim(value));
}

std::string describe_label(const SurvivalLabel& label) {
  return label.event ? "death observed" : "censored (alive at last follow-up)";
}

}  // namespace

std::optional<CoTRecord> parse_cot(std::string_view text) {
  CoTRecord cot;
  cot.text = text::trim(text);
  std::optional<RiskStratum> risk;
  enum class Section { None, Evidence, Other } section = Section::None;
  for (const auto& raw : text::nonempty_lines(text)) {
    const std::string line = strip_marker(raw);
    const std::string l = text::lower(line);
    if (starts_with_key(l, "risk level")) {
      if (!risk) risk = stratum_from_value(after_colon(line));
      section = Section::Other;
    } else if (starts_with_key(l, "key evidence")) {
      section = Section::Evidence;
      if (auto v = after_colon(line); !v.empty()) cot.key_evidence.push_back(v);
    } else if (starts_with_key(l, "uncertainty")) {
      cot.uncertainty = after_colon(line);
      section = Section::Other;
    } else if (starts_with_key(l, "reasoning") || starts_with_key(l, "summary")) {
      section = Section::Other;
    } else if (section == Section::Evidence && !line.empty()) {
      cot.key_evidence.push_back(line);
    }
  }
  if (!risk || cot.key_evidence.empty()) return std::nullopt;
  cot.risk_level = *risk;
  return cot;
}

std::string redact_label(std::string text, const SurvivalLabel& label) {
  const std::string needle = text::format_months(label.time_months);
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos)) {
    text.replace(pos, needle.size(), "[redacted]");
  }
  return text;
}

CoTRecord generate_cot(const Report& report, const SurvivalLabel& label, Modality modality,
                       const std::string& case_id, AgentSession& session) {
  if (text::trim(report.text).empty()) {
    throw Error(ErrorCode::InvalidArgument, "cannot reason from an empty report for " + case_id);
  }
  const RiskStratum target = stratum_for_time(label.time_months);
  PromptRequest req{prompt_ids::kCotGenerate,
                    {{"case_id", case_id},
                     {"modality", std::string(to_string(modality))},
                     {"report", report.text},
                     {"stratum", std::string(to_string(target))},
                     {"interval", interval_label(interval_of(target))},
                     {"survival_months", text::format_months(label.time_months)},
                     {"outcome", describe_label(label)},
                     {"feedback", ""}},
                    1024,
                    kReportTemperature,
                    std::string("cot/") + std::string(to_string(modality))};
  std::optional<CoTRecord> last;
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto cot = parse_cot(session.chat_complete(req));
    if (cot && cot->risk_level == target) {
      last = std::move(cot);
      break;
    }
    if (cot) {
      last = std::move(cot);
      req.variables["feedback"] = "The risk level must be " + std::string(to_string(target)) +
                                  ", the stratum of the observed outcome. Revise accordingly.";
    } else {
      req.variables["feedback"] = prompt_ids::kRetryFeedback;
    }
  }
  if (!last) throw Error(ErrorCode::Parse, "CoT unparseable after re-prompt for " + case_id);
  if (last->risk_level != target) {
    last->risk_level = target;
    last->risk_forced = true;
  }
  last->censored_stratum = !label.event;
  return *last;
}

std::optional<Critique> parse_critique(std::string_view answer) {
  std::optional<CotQuality> q;
  Critique c;
  for (const auto& [key, value] : text::key_values(answer)) {
    const auto k = text::canonical_key(key);
    if (k == "quality" && !q) {
      const auto v = text::canonical_key(value);
      if (v.rfind("high", 0) == 0) q = CotQuality::High;
      if (v.rfind("low", 0) == 0) q = CotQuality::Low;
    } else if (k == "critique") {
      c.text = value;
    }
  }
  if (!q) return std::nullopt;
  c.quality = *q;
  if (text::canonical_key(c.text) == "none") c.text.clear();
  if (c.quality == CotQuality::High) c.text.clear();
  if (c.quality == CotQuality::Low && c.text.empty()) c.text = "(no detail given)";
  return c;
}

Critique critique_cot(const CoTRecord& cot, const Report& report, Modality modality,
                      const std::string& case_id, AgentSession& session) {
  if (text::trim(cot.text).empty()) throw Error(ErrorCode::InvalidArgument, "empty CoT");
  PromptRequest req{prompt_ids::kCotCritique,
                    {{"case_id", case_id},
                     {"modality", std::string(to_string(modality))},
                     {"report", report.text},
                     {"cot", cot.text},
                     {"feedback", ""}},
                    512,
                    kParseTemperature,
                    std::string("critique/") + std::string(to_string(modality))};
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (attempt == 1) req.variables["feedback"] = prompt_ids::kRetryFeedback;
    if (auto c = parse_critique(session.chat_complete(req))) return *c;
  }
  return {CotQuality::Low, "<unparseable>"};
}

CoTRecord refine_loop(CoTRecord cot, const Report& report, const SurvivalLabel& label,
                      Modality modality, const std::string& case_id, AgentSession& session,
                      int max_rounds) {
  if (max_rounds < 0) throw Error(ErrorCode::InvalidArgument, "max_rounds must be >= 0");
  const RiskStratum target = stratum_for_time(label.time_months);
  auto critic_view = [&](const CoTRecord& c) {
    CoTRecord shown = c;
    shown.text = redact_label(c.text, label);
    return shown;
  };

  Critique crit = critique_cot(critic_view(cot), report, modality, case_id, session);
  for (int round = 1; crit.quality == CotQuality::Low && round <= max_rounds; ++round) {
    PromptRequest req{prompt_ids::kCotRefine,
                      {{"case_id", case_id},
                       {"modality", std::string(to_string(modality))},
                       {"report", report.text},
                       {"cot", cot.text},
                       {"critique", crit.text},
                       {"stratum", std::string(to_string(target))},
                       {"survival_months", text::format_months(label.time_months)},
                       {"feedback", ""}},
                      1024,
                      kReportTemperature,
                      fmt::format("refine/{}/{}", to_string(modality), round)};
    std::optional<CoTRecord> revised;
    for (int attempt = 0; attempt < 2 && !revised; ++attempt) {
      if (attempt == 1) req.variables["feedback"] = prompt_ids::kRetryFeedback;
      revised = parse_cot(session.chat_complete(req));
    }
    if (revised) {
      revised->risk_forced = cot.risk_forced;
      revised->censored_stratum = cot.censored_stratum;
      if (revised->risk_level != target) {
        revised->risk_level = target;
        revised->risk_forced = true;
      }
      cot = std::move(*revised);
    }
    cot.rounds = round;
    crit = critique_cot(critic_view(cot), report, modality, case_id, session);
  }
  cot.quality = crit.quality;
  cot.force_accept = crit.quality == CotQuality::Low;
  return cot;
}

// ---------------------------------------------------------------------------

fs::path CaseBank::sidecar_path(const fs::path& path) {
  auto p = path;
  p += ".vec";
  return p;
}

CaseBank CaseBank::open(const fs::path& path, Modality modality) {
  if (fs::exists(path)) {
    auto b = load(path);
    if (b.modality() != modality) {
      throw Error(ErrorCode::InvalidArgument, path.string() + " holds a different modality");
    }
    return b;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  CaseBank b;
  b.path_ = path;
  b.modality_ = modality;
  std::ofstream(path, std::ios::trunc);
  b.write_sidecar();
  return b;
}

CaseBank CaseBank::load(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::Io, "no bank at " + path.string());
  const auto vf = read_vector_file(sidecar_path(path));
  CaseBank b;
  b.path_ = path;
  try {
    b.modality_ = vf.preamble.at("modality").get<Modality>();
    if (vf.preamble.at("schema_version").get<int>() != kBankSchemaVersion) {
      throw Error(ErrorCode::CorruptBank, path.string() + ": unsupported schema version");
    }
    const auto expected = vf.preamble.at("sha256").get<std::string>();
    if (sha256_hex(std::as_bytes(std::span(vf.data))) != expected) {
      throw Error(ErrorCode::CorruptBank, path.string() + ": embedding checksum mismatch");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptBank, path.string() + ": bad sidecar preamble: " + e.what());
  }
  b.dim_ = vf.dim;

  std::ifstream in(path);
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    BankEntry e;
    try {
      const auto j = nlohmann::json::parse(line);
      e = j.get<BankEntry>();
      if (j.at("embedding_row").get<std::size_t>() != row) {
        throw Error(ErrorCode::CorruptBank, fmt::format("{}: line {} points at the wrong row", path.string(), row + 1));
      }
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::CorruptBank, fmt::format("{}: line {}: {}", path.string(), row + 1, ex.what()));
    }
    if (row >= vf.count) {
      throw Error(ErrorCode::CorruptBank, path.string() + ": more entries than embedding rows");
    }
    e.report_embedding = vf.row_copy(row);
    b.entries_.push_back(std::move(e));
    ++row;
  }
  if (row != vf.count) {
    throw Error(ErrorCode::CorruptBank,
                fmt::format("{}: {} entries but {} embedding rows", path.string(), row, vf.count));
  }
  return b;
}

void CaseBank::write_sidecar() const {
  std::vector<float> data;
  data.reserve(entries_.size() * dim_);
  for (const auto& e : entries_) data.insert(data.end(), e.report_embedding.begin(), e.report_embedding.end());
  nlohmann::json pre{{"schema_version", kBankSchemaVersion},
                     {"modality", modality_},
                     {"sha256", sha256_hex(std::as_bytes(std::span(data)))}};
  write_vector_file(sidecar_path(path_), pre, dim_, data);
}

void CaseBank::append(BankEntry entry) {
  if (entry.modality != modality_) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("{} entry offered to a {} bank", to_string(entry.modality), to_string(modality_)));
  }
  if (find(entry.case_id)) {
    throw Error(ErrorCode::DuplicateEntry,
                fmt::format("({}, {}) already in {}", entry.case_id, to_string(modality_), path_.string()));
  }
  if (entry.report_embedding.empty()) {
    throw Error(ErrorCode::DimensionMismatch, "bank entries need a report embedding");
  }
  if (dim_ != 0 && entry.report_embedding.size() != dim_) {
    throw Error(ErrorCode::DimensionMismatch,
                fmt::format("embedding dim {} does not match bank dim {}", entry.report_embedding.size(), dim_));
  }
  const std::size_t old_dim = dim_;
  dim_ = entry.report_embedding.size();

  nlohmann::json j = entry;
  j.erase("report_embedding");
  j["embedding_row"] = entries_.size();
  entries_.push_back(std::move(entry));
  try {
    write_sidecar();
    std::ofstream out(path_, std::ios::app);
    out << j.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "cannot append to " + path_.string());
  } catch (...) {
    entries_.pop_back();
    dim_ = old_dim;
    throw;
  }
}

const BankEntry* CaseBank::find(const std::string& case_id) const {
  for (const auto& e : entries_) {
    if (e.case_id == case_id) return &e;
  }
  return nullptr;
}

std::vector<std::string> CaseBank::case_ids() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.case_id);
  return out;
}

std::vector<std::pair<std::string, JointEntry>> joint_view(const CaseBank& wsi, const CaseBank& gene) {
  std::map<std::string, JointEntry> m;
  for (const auto& e : wsi.entries()) m[e.case_id].wsi = &e;
  for (const auto& e : gene.entries()) m[e.case_id].gene = &e;
  std::vector<std::pair<std::string, JointEntry>> out;
  for (const auto& [id, j] : m) {
    if (j.wsi && j.gene) out.emplace_back(id, j);
  }
  return out;
}

}  // namespace prognos::bank
