#include "prognos/gene_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "prognos/error.hpp"
#include "prognos/prompt_ids.hpp"
#include "prognos/text_parse.hpp"

namespace prognos::gene {

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string gene_lines(const std::vector<GeneRecord>& genes) {
  std::string out;
  for (const auto& g : genes) {
    out += fmt::format("{}\t{:.4f}\t{}\n", g.symbol, g.expression, g.mutated ? 1 : 0);
  }
  return out;
}

std::string knowledge_lines(const std::vector<GeneRecord>& genes, const GeneKnowledgeBase& kb) {
  std::string out;
  for (const auto& g : genes) {
    const auto hit = kb.lookup(g.symbol);
    out += g.symbol + ": " + (hit.found ? hit.function_summary : "no annotation available") + "\n";
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

CategoryMap CategoryMap::load(const fs::path& path) { return from_json(read_json(path)); }

CategoryMap CategoryMap::from_json(const nlohmann::json& j) {
  CategoryMap m;
  try {
    const auto& blocks = j.is_array() ? j : j.at("categories");
    for (const auto& block : blocks) {
      const auto name = block.at("category").get<std::string>();
      const auto cat = parse_gene_category(name);
      if (!cat) throw Error(ErrorCode::Parse, "unknown gene category '" + name + "'");
      for (const auto& g : block.at("genes")) m.add(g.get<std::string>(), *cat);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("category map: ") + e.what());
  }
  return m;
}

void CategoryMap::add(const std::string& symbol, GeneCategory category) {
  auto [it, inserted] = map_.emplace(symbol, category);
  if (!inserted && it->second != category) {
    warnings_.push_back(fmt::format("{} listed under {} and {}; keeping {}", symbol,
                                    to_string(it->second), to_string(category),
                                    to_string(it->second)));
  }
}

std::optional<GeneCategory> CategoryMap::find(const std::string& symbol) const {
  auto it = map_.find(symbol);
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

GeneKnowledgeBase GeneKnowledgeBase::load(const fs::path& path) { return from_json(read_json(path)); }

GeneKnowledgeBase GeneKnowledgeBase::from_json(const nlohmann::json& j) {
  GeneKnowledgeBase kb;
  try {
    for (const auto& [symbol, v] : j.items()) {
      GeneAnnotation a;
      a.function_summary = v.value("function_summary", "");
      a.aliases = v.value("aliases", std::vector<std::string>{});
      kb.add(symbol, std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("knowledge base: ") + e.what());
  }
  return kb;
}

GeneKnowledgeBase::Lookup GeneKnowledgeBase::lookup(const std::string& symbol) const {
  if (auto it = entries_.find(symbol); it != entries_.end()) return {it->second.function_summary, true};
  for (const auto& [sym, a] : entries_) {
    if (std::find(a.aliases.begin(), a.aliases.end(), symbol) != a.aliases.end()) {
      return {a.function_summary, true};
    }
  }
  return {};
}

std::size_t category_index(GeneCategory c) {
  return static_cast<std::size_t>(
      std::find(kAllGeneCategories.begin(), kAllGeneCategories.end(), c) - kAllGeneCategories.begin());
}

// ---------------------------------------------------------------------------

Stratification stratify(const GeneProfile& profile, const CategoryMap& cmap) {
  Stratification s;
  for (const auto& g : profile.genes) {
    if (auto c = cmap.find(g.symbol)) {
      s.subsets[category_index(*c)].push_back(g);
    } else {
      s.spillover.push_back(g);
    }
  }
  if (profile.genes.empty()) s.warnings.push_back("empty gene profile");
  if (!s.spillover.empty()) {
    s.warnings.push_back(fmt::format("{} gene(s) not in the category map, excluded", s.spillover.size()));
  }
  return s;
}

GeneCategoryStats category_stats(GeneCategory category, const std::vector<GeneRecord>& subset) {
  if (subset.empty()) {
    throw Error(ErrorCode::EmptyCategory, std::string(display_name(category)) + " has no genes");
  }
  std::vector<double> e;
  e.reserve(subset.size());
  double sum = 0.0;
  int mutated = 0;
  for (const auto& g : subset) {
    e.push_back(g.expression);
    sum += g.expression;
    mutated += g.mutated ? 1 : 0;
  }
  std::sort(e.begin(), e.end());
  const std::size_t n = e.size();
  GeneCategoryStats s;
  s.category = category;
  s.n_genes = static_cast<int>(n);
  s.mean = sum / static_cast<double>(n);
  s.median = n % 2 ? e[n / 2] : (e[n / 2 - 1] + e[n / 2]) / 2.0;
  s.mutation_ratio = static_cast<double>(mutated) / static_cast<double>(n);
  return s;
}

std::string describe_stats(const GeneCategoryStats& s) {
  return fmt::format("mean expression {:.3f}, median {:.3f}, mutation ratio {:.2f} over {} gene(s)",
                     s.mean, s.median, s.mutation_ratio, s.n_genes);
}

std::vector<double> expression_z(const std::vector<GeneRecord>& subset) {
  const auto n = static_cast<double>(subset.size());
  std::vector<double> z(subset.size(), 0.0);
  if (subset.empty()) return z;
  double mean = 0.0;
  for (const auto& g : subset) mean += g.expression;
  mean /= n;
  double var = 0.0;
  for (const auto& g : subset) var += (g.expression - mean) * (g.expression - mean);
  const double sd = std::sqrt(var / n);
  if (sd == 0.0) return z;
  for (std::size_t i = 0; i < subset.size(); ++i) z[i] = (subset[i].expression - mean) / sd;
  return z;
}

std::vector<std::string> fallback_selection(const std::vector<GeneRecord>& subset, std::size_t max_k) {
  const auto z = expression_z(subset);
  std::vector<std::size_t> idx(subset.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double za = std::abs(z[a]), zb = std::abs(z[b]);
    if (za != zb) return za > zb;
    return subset[a].symbol < subset[b].symbol;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < idx.size() && out.size() < max_k; ++i) out.push_back(subset[idx[i]].symbol);
  return out;
}

std::vector<std::string> parse_gene_selection(std::string_view answer,
                                              const std::vector<GeneRecord>& subset,
                                              std::size_t max_k, std::vector<std::string>* dropped) {
  std::map<std::string, std::string> known;  // upper-case -> canonical symbol
  for (const auto& g : subset) known.emplace(upper(g.symbol), g.symbol);

  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& line : text::nonempty_lines(answer)) {
    // Only the part after a label such as "Selected genes:" carries symbols.
    std::string_view body = line;
    if (auto colon = body.find(':'); colon != std::string_view::npos) body = body.substr(colon + 1);
    std::string token;
    auto flush = [&] {
      while (!token.empty() && (token.back() == '.' || token.back() == '-')) token.pop_back();
      if (token.empty()) return;
      const auto key = upper(token);
      token.clear();
      auto it = known.find(key);
      if (it == known.end()) {
        if (dropped) dropped->push_back(key);
        return;
      }
      if (out.size() < max_k && seen.insert(it->second).second) out.push_back(it->second);
    };
    for (char c : body) {
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') {
        token.push_back(c);
      } else {
        flush();
      }
    }
    flush();
  }
  return out;
}

KeyGeneSelection select_key_genes(const GeneCategoryStats& stats,
                                  const std::vector<GeneRecord>& subset,
                                  const GeneKnowledgeBase& kb, const std::string& case_id,
                                  AgentSession& session, std::size_t max_k) {
  if (subset.empty()) {
    throw Error(ErrorCode::EmptyCategory, std::string(display_name(stats.category)) + " has no genes");
  }
  if (max_k == 0) throw Error(ErrorCode::InvalidArgument, "max_k must be positive");
  KeyGeneSelection sel;
  PromptRequest req{prompt_ids::kGeneSelect,
                    {{"case_id", case_id},
                     {"category", std::string(display_name(stats.category))},
                     {"stats", describe_stats(stats)},
                     {"genes", gene_lines(subset)},
                     {"knowledge", knowledge_lines(subset, kb)},
                     {"max_k", std::to_string(max_k)},
                     {"feedback", ""}},
                    512,
                    kParseTemperature,
                    std::string("select/") + std::string(to_string(stats.category))};
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (attempt == 1) req.variables["feedback"] = prompt_ids::kRetryFeedback;
    std::vector<std::string> dropped;
    sel.symbols = parse_gene_selection(session.chat_complete(req), subset, max_k, &dropped);
    for (const auto& d : dropped) sel.warnings.push_back("dropped unknown gene symbol '" + d + "'");
    if (!sel.symbols.empty()) return sel;
  }
  sel.symbols = fallback_selection(subset, max_k);
  sel.fallback = true;
  sel.warnings.push_back(std::string(display_name(stats.category)) +
                         ": no valid symbol after re-prompt, using z-score ranking");
  return sel;
}

Report placeholder_report(GeneCategory category, const std::string& case_id) {
  Report r;
  r.text = "No genes profiled in category " + std::string(display_name(category)) + ".";
  r.source = ReportSource::GeneCategory;
  r.subject_id = case_id + "/" + std::string(to_string(category));
  r.add_flag("placeholder");
  return r;
}

Report category_report(const GeneCategoryStats& stats, const std::vector<GeneRecord>& selected,
                       const GeneKnowledgeBase& kb, const std::string& case_id,
                       AgentSession& session) {
  PromptRequest req{prompt_ids::kGeneCategoryReport,
                    {{"case_id", case_id},
                     {"category", std::string(display_name(stats.category))},
                     {"stats", describe_stats(stats)},
                     {"selected", gene_lines(selected)},
                     {"knowledge", knowledge_lines(selected, kb)},
                     {"feedback", ""}},
                    1024,
                    kReportTemperature,
                    std::string("category/") + std::string(to_string(stats.category))};
  Report r;
  r.text = text::trim(session.chat_complete(req));
  r.source = ReportSource::GeneCategory;
  r.subject_id = case_id + "/" + std::string(to_string(stats.category));
  for (const auto& g : selected) {
    if (r.text.find(g.symbol) == std::string::npos) r.add_flag("missing_gene:" + g.symbol);
  }
  return r;
}

Report summarize_gene(const std::vector<Report>& category_reports, const std::string& case_id,
                      AgentSession& session) {
  std::string block;
  int real = 0;
  for (const auto& r : category_reports) {
    if (!r.has_flag("placeholder")) ++real;
    std::string flat = r.text;
    std::replace(flat.begin(), flat.end(), '\n', ' ');
    block += flat + "\n";
  }
  if (real == 0) throw Error(ErrorCode::AllCategoriesEmpty, "no gene category has data for " + case_id);
  PromptRequest req{prompt_ids::kGeneSummarize,
                    {{"case_id", case_id}, {"category_reports", block}, {"feedback", ""}},
                    1024,
                    kReportTemperature,
                    "gene_summary"};
  Report out;
  out.source = ReportSource::GeneSummary;
  out.subject_id = case_id;
  for (int attempt = 0; attempt < 2 && out.text.empty(); ++attempt) {
    if (attempt == 1) req.variables["feedback"] = prompt_ids::kRetryFeedback;
    out.text = text::trim(session.chat_complete(req));
  }
  if (out.text.empty()) throw Error(ErrorCode::Parse, "empty gene summary for " + case_id);
  if (real < 3) out.add_flag("low_information");
  return out;
}

GeneAnalysis analyze_gene(const GeneProfile& profile, const CategoryMap& cmap,
                          const GeneKnowledgeBase& kb, const std::string& case_id,
                          AgentSession& session, std::size_t max_k) {
  GeneAnalysis a;
  a.strata = stratify(profile, cmap);
  a.warnings = a.strata.warnings;
  for (std::size_t i = 0; i < kCategoryCount; ++i) {
    const GeneCategory cat = kAllGeneCategories[i];
    const auto& subset = a.strata.subsets[i];
    if (subset.empty()) {
      a.category_reports.push_back(placeholder_report(cat, case_id));
      continue;
    }
    a.stats[i] = category_stats(cat, subset);
    a.selections[i] = select_key_genes(*a.stats[i], subset, kb, case_id, session, max_k);
    a.warnings.insert(a.warnings.end(), a.selections[i].warnings.begin(), a.selections[i].warnings.end());
    std::vector<GeneRecord> chosen;
    for (const auto& sym : a.selections[i].symbols) {
      auto it = std::find_if(subset.begin(), subset.end(), [&](const GeneRecord& g) { return g.symbol == sym; });
      chosen.push_back(*it);
    }
    a.category_reports.push_back(category_report(*a.stats[i], chosen, kb, case_id, session));
  }
  a.summary = summarize_gene(a.category_reports, case_id, session);
  return a;
}

}  // namespace prognos::gene
