#include "prognos/wsi_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "prognos/error.hpp"
#include "prognos/prompt_ids.hpp"
#include "prognos/text_parse.hpp"

namespace prognos::wsi {

SelectionPolicy parse_policy(std::string_view name) {
  const auto n = text::lower(name);
  if (n == "literal") return SelectionPolicy::Literal;
  if (n == "greedy") return SelectionPolicy::Greedy;
  throw Error(ErrorCode::InvalidArgument, "unknown selection policy '" + std::string(name) + "'");
}

std::string_view to_string(SelectionPolicy p) {
  return p == SelectionPolicy::Literal ? "literal" : "greedy";
}

// ---------------------------------------------------------------------------
// Region proposal

std::vector<std::vector<std::size_t>> dbscan(std::span<const GridPoint> points, double eps,
                                             std::size_t min_pts) {
  const std::size_t n = points.size();
  const double eps2 = eps * eps;
  std::vector<std::vector<std::size_t>> nbrs(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = points[i].x - points[j].x;
      const double dy = points[i].y - points[j].y;
      if (dx * dx + dy * dy <= eps2) nbrs[i].push_back(j);
    }
  }
  constexpr int kUnset = -1;
  std::vector<int> label(n, kUnset);
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kUnset || nbrs[i].size() < min_pts) continue;
    const int c = static_cast<int>(clusters.size());
    clusters.emplace_back();
    std::vector<std::size_t> queue{i};
    label[i] = c;
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const std::size_t p = queue[q];
      clusters[c].push_back(p);
      if (nbrs[p].size() < min_pts) continue;  // border: does not expand
      for (std::size_t j : nbrs[p]) {
        if (label[j] != kUnset) continue;
        label[j] = c;
        queue.push_back(j);
      }
    }
    std::sort(clusters[c].begin(), clusters[c].end());
  }
  return clusters;
}

double attention_cut(std::vector<double> attention, double percentile) {
  if (attention.empty()) return std::numeric_limits<double>::infinity();
  std::sort(attention.begin(), attention.end());
  const auto n = attention.size();
  const auto rank = static_cast<std::size_t>(std::floor(percentile * static_cast<double>(n)));
  return attention[std::min(n - 1, rank)];
}

std::vector<Region> propose_regions(const std::vector<PatchRecord>& patches, double eps,
                                    std::size_t min_pts, double percentile) {
  if (!(percentile >= 0.0 && percentile < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "attention percentile must lie in [0, 1)");
  }
  std::vector<double> att;
  att.reserve(patches.size());
  for (const auto& p : patches) {
    if (!p.attention) {
      throw Error(ErrorCode::InvalidArgument, "patch " + p.patch_id + " has no attention score");
    }
    if (p.width <= 0 || p.height <= 0) {
      throw Error(ErrorCode::InvalidArgument, "patch " + p.patch_id + " has empty extent");
    }
    att.push_back(*p.attention);
  }
  const double cut = attention_cut(att, percentile);

  std::vector<std::size_t> kept;
  std::vector<GridPoint> grid;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (att[i] < cut) continue;
    kept.push_back(i);
    grid.push_back({static_cast<double>(patches[i].x) / static_cast<double>(patches[i].width),
                    static_cast<double>(patches[i].y) / static_cast<double>(patches[i].height)});
  }

  std::vector<Region> out;
  for (const auto& cluster : dbscan(grid, eps, min_pts)) {
    if (cluster.size() < min_pts) continue;
    Region r;
    r.region_id = fmt::format("R{}", out.size() + 1);
    long x0 = std::numeric_limits<long>::max(), y0 = x0;
    long x1 = std::numeric_limits<long>::min(), y1 = x1;
    for (std::size_t k : cluster) {
      const auto& p = patches[kept[k]];
      r.patch_ids.push_back(p.patch_id);
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x + p.width);
      y1 = std::max(y1, p.y + p.height);
    }
    r.bbox = {x0, y0, x1 - x0, y1 - y0};
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Similarity and selection

SimilarityMatrix pairwise_cosine(const std::vector<std::vector<float>>& vectors) {
  const std::size_t n = vectors.size();
  if (n > 0) {
    const auto d = vectors.front().size();
    for (std::size_t i = 0; i < n; ++i) {
      if (vectors[i].size() != d) {
        throw Error(ErrorCode::DimensionMismatch,
                    fmt::format("vector {} has dimension {}, expected {}", i, vectors[i].size(), d));
      }
      if (!is_unit(vectors[i])) {
        throw Error(ErrorCode::InvalidArgument,
                    fmt::format("vector {} is not unit length (norm {})", i, l2_norm(vectors[i])));
      }
    }
  }
  SimilarityMatrix s(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < vectors[i].size(); ++k) {
        dot += static_cast<double>(vectors[i][k]) * static_cast<double>(vectors[j][k]);
      }
      s.set(i, j, std::clamp(dot, -1.0, 1.0));
    }
  }
  return s;
}

std::vector<std::size_t> threshold_select(const SimilarityMatrix& s, double tau,
                                          SelectionPolicy policy,
                                          std::span<const std::size_t> order) {
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw Error(ErrorCode::BadThreshold, fmt::format("threshold {} outside (0, 1]", tau));
  }
  const std::size_t n = s.size();
  std::vector<std::size_t> kept;

  if (policy == SelectionPolicy::Literal) {
    for (std::size_t i = 0; i < n; ++i) {
      double m = n == 1 ? 0.0 : -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) m = std::max(m, s(i, j));
      }
      if (m < tau) kept.push_back(i);
    }
    return kept;
  }

  std::vector<std::size_t> scan(order.begin(), order.end());
  if (scan.empty()) {
    scan.resize(n);
    std::iota(scan.begin(), scan.end(), std::size_t{0});
  }
  {
    std::vector<std::size_t> check = scan;
    std::sort(check.begin(), check.end());
    bool perm = check.size() == n;
    for (std::size_t i = 0; perm && i < n; ++i) perm = check[i] == i;
    if (!perm) throw Error(ErrorCode::InvalidArgument, "greedy order is not a permutation");
  }
  for (std::size_t i : scan) {
    double m = 0.0;
    bool first = true;
    for (std::size_t k : kept) {
      m = first ? s(i, k) : std::max(m, s(i, k));
      first = false;
    }
    if (m < tau) kept.push_back(i);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::vector<std::size_t> attention_order(const std::vector<PatchRecord>& patches) {
  std::vector<std::size_t> idx(patches.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return patches[a].attention.value_or(0.0) > patches[b].attention.value_or(0.0);
  });
  return idx;
}

CosMiningResult cos_mine_select(const SimilarityMatrix& visual, const SimilarityMatrix& text,
                                double tau_v, double tau_t, SelectionPolicy policy,
                                std::span<const std::size_t> order) {
  if (visual.size() != text.size()) {
    throw Error(ErrorCode::DimensionMismatch, "visual and textual matrices differ in size");
  }
  CosMiningResult r;
  r.visual_selected = threshold_select(visual, tau_v, policy, order);
  r.text_selected = threshold_select(text, tau_t, policy, order);
  std::set_intersection(r.visual_selected.begin(), r.visual_selected.end(),
                        r.text_selected.begin(), r.text_selected.end(),
                        std::back_inserter(r.selected));
  return r;
}

CosMiningResult cos_mine(const std::vector<PatchRecord>& patches,
                         const std::vector<Report>& preliminary_reports, AgentSession& session,
                         double tau_v, double tau_t, SelectionPolicy policy) {
  if (patches.empty()) throw Error(ErrorCode::InvalidArgument, "CoSMining needs at least one patch");
  if (preliminary_reports.size() != patches.size()) {
    throw Error(ErrorCode::InvalidArgument, "one preliminary report per patch is required");
  }
  std::vector<std::vector<float>> visual;
  std::vector<std::vector<float>> textual;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i].embedding.empty()) {
      throw Error(ErrorCode::DimensionMismatch, "patch " + patches[i].patch_id + " has no embedding");
    }
    visual.push_back(patches[i].embedding);
    textual.push_back(session.embed_text(preliminary_reports[i].text));
  }
  const auto order = attention_order(patches);
  return cos_mine_select(pairwise_cosine(visual), pairwise_cosine(textual), tau_v, tau_t, policy,
                         order);
}

// ---------------------------------------------------------------------------
// Model-facing steps

namespace {

std::string mag_label(Magnification m) { return fmt::format("{:g}", magnification_value(m)); }

ReportSource source_for(Magnification m) {
  switch (m) {
    case Magnification::X2_5: return ReportSource::Global;
    case Magnification::X10: return ReportSource::Mag10;
    case Magnification::X20: return ReportSource::Mag20;
  }
  return ReportSource::Mag10;
}

std::string bullet_block(const std::vector<Report>& reports) {
  std::string out;
  for (const auto& r : reports) out += "- [" + r.subject_id + "] " + r.text + "\n";
  return out.empty() ? "(none)\n" : out;
}

}  // namespace

std::optional<Confidence> parse_confidence(std::string_view answer) {
  const std::string l = text::lower(answer);
  std::set<Confidence> seen;
  std::string word;
  auto flush = [&] {
    if (word == "low") seen.insert(Confidence::Low);
    if (word == "medium" || word == "moderate") seen.insert(Confidence::Medium);
    if (word == "high") seen.insert(Confidence::High);
    word.clear();
  };
  for (char c : l) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word.push_back(c);
    } else {
      flush();
    }
  }
  flush();
  if (seen.size() != 1) return std::nullopt;
  return *seen.begin();
}

Report assess_confidence(const Report& report, const std::string& case_id, AgentSession& session) {
  if (report.source != ReportSource::Mag10) {
    throw Error(ErrorCode::InvalidArgument, "confidence is assessed on x10 reports only");
  }
  Report out = report;
  PromptRequest req{prompt_ids::kWsiConfidence,
                    {{"case_id", case_id},
                     {"patch_id", report.subject_id},
                     {"report", report.text},
                     {"feedback", ""}},
                    64,
                    kParseTemperature,
                    "confidence/" + report.subject_id};
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (attempt == 1) req.variables["feedback"] = prompt_ids::kRetryFeedback;
    if (auto c = parse_confidence(session.chat_complete(req))) {
      out.confidence = *c;
      return out;
    }
  }
  out.confidence = Confidence::Medium;
  out.add_flag("confidence_unparsed");
  return out;
}

Report lm_screen(const SlideManifest& manifest, const std::string& case_id, AgentSession& session) {
  const SlideLevel* l3 = manifest.find_level(3);
  if (!l3 || l3->tiles.empty()) {
    throw Error(ErrorCode::MissingLevelImage, "slide " + manifest.slide_id + " has no level-3 image");
  }
  PromptRequest req{prompt_ids::kWsiGlobal,
                    {{"case_id", case_id}, {"slide_id", manifest.slide_id}, {"feedback", ""}},
                    1024,
                    kReportTemperature,
                    "global"};
  Report r;
  r.text = session.describe_image(l3->tiles.front().image_ref, std::move(req));
  r.source = ReportSource::Global;
  r.subject_id = manifest.slide_id;
  if (manifest.level3_synthetic) r.add_flag("level3_synthetic");
  return r;
}

Report describe_patch(const PatchRecord& patch, const std::string& case_id, bool detailed,
                      AgentSession& session, const Report* preliminary) {
  PromptRequest req;
  req.template_id = detailed ? prompt_ids::kWsiPatchDetail : prompt_ids::kWsiPatchBrief;
  req.variables = {{"case_id", case_id},
                   {"patch_id", patch.patch_id},
                   {"magnification", mag_label(patch.magnification)},
                   {"feedback", ""}};
  if (detailed) req.variables["preliminary"] = preliminary ? preliminary->text : "";
  req.max_tokens = detailed ? 1024 : 256;
  req.temperature = kReportTemperature;
  req.tag = (detailed ? "detail/" : "brief/") + patch.patch_id;
  Report r;
  r.text = session.describe_image(patch.image_ref, std::move(req));
  r.source = source_for(patch.magnification);
  r.subject_id = patch.patch_id;
  return r;
}

ConfMiningResult conf_mine(const std::vector<PatchRecord>& low_conf_patches,
                           const SlideManifest& manifest, const std::string& case_id,
                           AgentSession& session, double tau_v, double tau_t,
                           SelectionPolicy policy) {
  ConfMiningResult out;
  std::set<std::string> taken;
  for (const auto& parent : low_conf_patches) {
    const auto subs = subtiles_of(manifest, parent);
    if (subs.empty()) {
      out.skipped_parents.push_back(parent.patch_id);
      out.warnings.push_back(std::string(to_string(ErrorCode::MissingSubTiles)) + ": " +
                             parent.patch_id + " has no level-1 sub-tiles, skipped");
      continue;
    }
    std::vector<Report> brief;
    for (const auto& s : subs) brief.push_back(describe_patch(s, case_id, false, session));
    const auto sel = cos_mine(subs, brief, session, tau_v, tau_t, policy);
    for (std::size_t i : sel.selected) {
      if (!taken.insert(subs[i].patch_id).second) continue;
      out.reports.push_back(describe_patch(subs[i], case_id, true, session, &brief[i]));
      out.patches.push_back(subs[i]);
    }
  }
  return out;
}

std::optional<ExtractionResult> parse_attributes(std::string_view answer,
                                                 const std::vector<std::string>& checklist) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < checklist.size(); ++i) index[text::canonical_key(checklist[i])] = i;

  std::vector<std::optional<std::string>> values(checklist.size());
  ExtractionResult r;
  bool any = false;
  for (const auto& [key, value] : text::key_values(answer)) {
    const auto ck = text::canonical_key(key);
    if (ck == "summary") {
      r.structured.summary = value;
      continue;
    }
    auto it = index.find(ck);
    if (it == index.end()) {
      r.warnings.push_back("dropped unknown attribute '" + key + "'");
      continue;
    }
    any = true;
    if (!values[it->second]) values[it->second] = value.empty() ? std::string(kNotAssessed) : value;
  }
  if (!any) return std::nullopt;
  for (std::size_t i = 0; i < checklist.size(); ++i) {
    if (!values[i]) r.warnings.push_back("attribute '" + checklist[i] + "' missing, not assessed");
    r.structured.attributes.emplace_back(checklist[i], values[i].value_or(std::string(kNotAssessed)));
  }
  return r;
}

ExtractionResult extract_attributes(const Report& global, const std::vector<Report>& mag10,
                                    const std::vector<Report>& mag20,
                                    const std::vector<std::string>& checklist,
                                    const std::string& case_id, AgentSession& session) {
  if (checklist.empty()) throw Error(ErrorCode::InvalidArgument, "empty attribute checklist");
  std::string list;
  for (const auto& k : checklist) list += k + "\n";
  const std::string reports = "Global (x2.5):\n" + global.text + "\n\nRegional (x10):\n" +
                              bullet_block(mag10) + "\nDetail (x20):\n" + bullet_block(mag20);
  PromptRequest req{prompt_ids::kWsiExtract,
                    {{"case_id", case_id}, {"checklist", list}, {"reports", reports}, {"feedback", ""}},
                    2048,
                    kParseTemperature,
                    "extract"};
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (attempt == 1) req.variables["feedback"] = prompt_ids::kRetryFeedback;
    if (auto r = parse_attributes(session.chat_complete(req), checklist)) return std::move(*r);
  }
  throw Error(ErrorCode::Parse, "attribute extraction unparseable after re-prompt for " + case_id);
}

Report summarize_wsi(const StructuredWsiReport& structured, const std::string& case_id,
                     AgentSession& session) {
  std::string block;
  for (const auto& [k, v] : structured.attributes) block += k + ": " + v + "\n";
  if (!structured.summary.empty()) block += "Summary: " + structured.summary + "\n";
  PromptRequest req{prompt_ids::kWsiSummarize,
                    {{"case_id", case_id}, {"structured", block}, {"feedback", ""}},
                    1024,
                    kReportTemperature,
                    "wsi_summary"};
  Report r;
  r.source = ReportSource::WsiSummary;
  r.subject_id = case_id;
  for (int attempt = 0; attempt < 2 && r.text.empty(); ++attempt) {
    if (attempt == 1) req.variables["feedback"] = prompt_ids::kRetryFeedback;
    r.text = text::trim(session.chat_complete(req));
  }
  if (r.text.empty()) throw Error(ErrorCode::Parse, "empty WSI summary for " + case_id);
  if (structured.all_not_assessed()) r.add_flag("low_information");
  return r;
}

std::vector<std::string> load_checklist(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read checklist " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    line = text::trim(line);
    if (line.empty() || line.front() == '#') continue;
    out.push_back(line);
  }
  if (out.empty()) throw Error(ErrorCode::Parse, "checklist " + path.string() + " is empty");
  return out;
}

// ---------------------------------------------------------------------------

WsiAnalysis analyze_wsi(SlideManifest manifest, const std::string& case_id,
                        const WsiOptions& options, AgentSession& session) {
  WsiAnalysis a;
  ensure_level3_image(manifest, options.level3_dir.empty() ? manifest.directory : options.level3_dir);
  if (manifest.level3_synthetic) a.warnings.push_back("level-3 composite synthesized from level 2");
  a.global = lm_screen(manifest, case_id, session);

  const SlideLevel* l2 = manifest.find_level(2);
  if (!l2 || l2->tiles.empty()) {
    throw Error(ErrorCode::MissingLevelImage, "slide " + manifest.slide_id + " has no level-2 tiles");
  }
  const auto& tiles = l2->tiles;
  const bool all_attention =
      std::all_of(tiles.begin(), tiles.end(), [](const PatchRecord& p) { return p.attention.has_value(); });

  // Candidate x10 patches: region members, else the highest-attention tiles.
  std::vector<PatchRecord> candidates;
  if (all_attention) {
    a.regions = propose_regions(tiles, options.dbscan_eps, options.dbscan_min_pts,
                                options.attention_percentile);
  } else {
    a.warnings.push_back("attention missing on some tiles, region proposal skipped");
  }
  std::set<std::string> in_region;
  for (const auto& r : a.regions) in_region.insert(r.patch_ids.begin(), r.patch_ids.end());
  std::vector<PatchRecord> pool;
  if (!in_region.empty()) {
    for (const auto& t : tiles) {
      if (in_region.count(t.patch_id)) pool.push_back(t);
    }
  } else {
    pool = tiles;
    if (all_attention) a.warnings.push_back("no attention region found, using top-attention tiles");
  }
  for (std::size_t i : attention_order(pool)) {
    if (candidates.size() >= options.max_candidates) break;
    candidates.push_back(pool[i]);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](const PatchRecord& x, const PatchRecord& y) {
    auto pos = [&](const PatchRecord& p) {
      return std::find_if(tiles.begin(), tiles.end(),
                          [&](const PatchRecord& t) { return t.patch_id == p.patch_id; }) -
             tiles.begin();
    };
    return pos(x) < pos(y);
  });
  for (const auto& c : candidates) a.candidate_ids.push_back(c.patch_id);

  std::vector<Report> brief;
  for (const auto& c : candidates) brief.push_back(describe_patch(c, case_id, false, session));
  a.cos = cos_mine(candidates, brief, session, options.tau_v, options.tau_t, options.policy);

  std::vector<PatchRecord> low;
  for (std::size_t i : a.cos.selected) {
    const Report rated = assess_confidence(brief[i], case_id, session);
    Report detail = describe_patch(candidates[i], case_id, true, session, &brief[i]);
    detail.confidence = rated.confidence;
    detail.flags = rated.flags;
    if (rated.has_flag("confidence_unparsed")) {
      a.warnings.push_back("confidence unparseable for " + candidates[i].patch_id + ", using Medium");
    }
    if (detail.confidence == Confidence::Low) low.push_back(candidates[i]);
    a.mag10.push_back(std::move(detail));
  }

  a.conf = conf_mine(low, manifest, case_id, session, options.tau_v, options.tau_t, options.policy);
  a.warnings.insert(a.warnings.end(), a.conf.warnings.begin(), a.conf.warnings.end());

  auto extraction = extract_attributes(a.global, a.mag10, a.conf.reports, options.checklist,
                                       case_id, session);
  a.structured = std::move(extraction.structured);
  a.warnings.insert(a.warnings.end(), extraction.warnings.begin(), extraction.warnings.end());
  a.summary = summarize_wsi(a.structured, case_id, session);
  return a;
}

}  // namespace prognos::wsi
