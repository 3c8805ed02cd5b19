#include "prognos/config.hpp"

#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>

#include <fmt/format.h>

#include "prognos/error.hpp"
#include "prognos/hashing.hpp"
#include "prognos/text_parse.hpp"

namespace prognos {

std::map<std::string, std::string> parse_kv_config(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Drop a trailing comment unless the '#' sits inside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = text::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::Parse, fmt::format("{}:{}: expected key = value", origin, lineno));
    }
    std::string key = text::trim(std::string_view(line).substr(0, eq));
    std::string value = text::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::Parse, fmt::format("{}:{}: empty key", origin, lineno));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    } else if (!value.empty() && value.front() == '"') {
      throw Error(ErrorCode::Parse, fmt::format("{}:{}: unterminated string", origin, lineno));
    }
    if (!out.emplace(key, value).second) {
      throw Error(ErrorCode::Parse, fmt::format("{}:{}: duplicate key '{}'", origin, lineno, key));
    }
  }
  return out;
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::Parse, "config key '" + key + "' needs a number, got '" + v + "'");
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used == v.size()) return i;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::Parse, "config key '" + key + "' needs an integer, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw Error(ErrorCode::Parse, "config key '" + key + "' needs true or false, got '" + v + "'");
}

}  // namespace

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto kv = parse_kv_config(text, path.string());

  RunConfig c;
  c.source = fs::absolute(path);
  const fs::path dir = c.source.parent_path();
  auto p = [&](const std::string& v) { return (dir / v).lexically_normal(); };
  // Relative defaults also resolve against the config directory.
  c.output_dir = p(c.output_dir.string());
  c.prompts_dir = p(c.prompts_dir.string());
  c.checklist = p(c.checklist.string());
  c.gene_categories = p(c.gene_categories.string());
  c.gene_kb = p(c.gene_kb.string());

  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters = {
      {"cohort", [&](auto&, auto& v) { c.cohort = p(v); }},
      {"experts", [&](auto&, auto& v) { c.experts = p(v); }},
      {"output_dir", [&](auto&, auto& v) { c.output_dir = p(v); }},
      {"prompts_dir", [&](auto&, auto& v) { c.prompts_dir = p(v); }},
      {"checklist", [&](auto&, auto& v) { c.checklist = p(v); }},
      {"gene_categories", [&](auto&, auto& v) { c.gene_categories = p(v); }},
      {"gene_kb", [&](auto&, auto& v) { c.gene_kb = p(v); }},
      {"backend", [&](auto& k, auto& v) {
         if (v == "mock") c.backend.kind = BackendKind::Mock;
         else if (v == "http") c.backend.kind = BackendKind::Http;
         else throw Error(ErrorCode::Parse, "config key '" + k + "' must be mock or http");
       }},
      {"mock_mode", [&](auto& k, auto& v) {
         if (v == "oracle") c.backend.mock_mode = MockMode::Oracle;
         else if (v == "fixture") c.backend.mock_mode = MockMode::Fixture;
         else throw Error(ErrorCode::Parse, "config key '" + k + "' must be oracle or fixture");
       }},
      {"fixtures", [&](auto&, auto& v) { c.backend.fixtures = p(v); }},
      {"endpoint", [&](auto&, auto& v) { c.backend.endpoint = v; }},
      {"model", [&](auto&, auto& v) { c.backend.model = v; }},
      {"vision_model", [&](auto&, auto& v) { c.backend.vision_model = v; }},
      {"embedding_model", [&](auto&, auto& v) { c.backend.embedding_model = v; }},
      {"api_key_env", [&](auto&, auto& v) { c.backend.api_key_env = v; }},
      {"timeout_s", [&](auto& k, auto& v) { c.backend.timeout_s = to_double(k, v); }},
      {"max_retries", [&](auto& k, auto& v) { c.backend.max_retries = static_cast<int>(to_int(k, v)); }},
      {"max_in_flight", [&](auto& k, auto& v) { c.backend.max_in_flight = static_cast<int>(to_int(k, v)); }},
      {"embed_dim", [&](auto& k, auto& v) { c.backend.embed_dim = static_cast<int>(to_int(k, v)); }},
      {"wall_clock_trace", [&](auto& k, auto& v) { c.backend.wall_clock_trace = to_bool(k, v); }},
      {"tau_v", [&](auto& k, auto& v) { c.tau_v = to_double(k, v); }},
      {"tau_t", [&](auto& k, auto& v) { c.tau_t = to_double(k, v); }},
      {"policy", [&](auto&, auto& v) { c.policy = wsi::parse_policy(v); }},
      {"dbscan_eps", [&](auto& k, auto& v) { c.dbscan_eps = to_double(k, v); }},
      {"dbscan_min_pts", [&](auto& k, auto& v) { c.dbscan_min_pts = static_cast<int>(to_int(k, v)); }},
      {"attention_percentile", [&](auto& k, auto& v) { c.attention_percentile = to_double(k, v); }},
      {"max_candidates", [&](auto& k, auto& v) { c.max_candidates = static_cast<int>(to_int(k, v)); }},
      {"max_genes", [&](auto& k, auto& v) { c.max_genes = static_cast<int>(to_int(k, v)); }},
      {"max_refine_rounds", [&](auto& k, auto& v) { c.max_refine_rounds = static_cast<int>(to_int(k, v)); }},
      {"k", [&](auto& k, auto& v) { c.k = static_cast<int>(to_int(k, v)); }},
      {"depth", [&](auto& k, auto& v) { c.depth = static_cast<int>(to_int(k, v)); }},
      {"w_wsi", [&](auto& k, auto& v) { c.w_wsi = to_double(k, v); }},
      {"w_gene", [&](auto& k, auto& v) { c.w_gene = to_double(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"folds", [&](auto& k, auto& v) { c.folds = static_cast<int>(to_int(k, v)); }},
      {"jobs", [&](auto& k, auto& v) { c.jobs = static_cast<int>(to_int(k, v)); }},
  };
  for (const auto& [key, value] : kv) {
    auto it = setters.find(key);
    if (it == setters.end()) throw Error(ErrorCode::Parse, path.string() + ": unknown key '" + key + "'");
    it->second(key, value);
  }
  c.backend.seed = c.seed;
  return c;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
  auto need = [&](const fs::path& p, const char* what) {
    if (p.empty()) fail(std::string(what) + " is not set");
    if (!fs::exists(p)) fail(std::string(what) + " does not exist: " + p.string());
  };
  need(cohort, "cohort");
  need(experts, "experts");
  need(prompts_dir, "prompts_dir");
  need(checklist, "checklist");
  need(gene_categories, "gene_categories");
  need(gene_kb, "gene_kb");
  if (!(tau_v > 0.0 && tau_v <= 1.0)) fail("tau_v must lie in (0, 1]");
  if (!(tau_t > 0.0 && tau_t <= 1.0)) fail("tau_t must lie in (0, 1]");
  if (k < 1) fail("k must be at least 1");
  if (depth != 2) fail("depth must be 2");
  if (w_wsi < 0.0 || w_gene < 0.0 || std::abs(w_wsi + w_gene - 1.0) > 1e-9) fail("w_wsi + w_gene must be 1");
  if (dbscan_min_pts < 1 || dbscan_eps <= 0.0) fail("dbscan_eps and dbscan_min_pts must be positive");
  if (!(attention_percentile >= 0.0 && attention_percentile < 1.0)) fail("attention_percentile must lie in [0, 1)");
  if (max_candidates < 1 || max_genes < 1) fail("max_candidates and max_genes must be positive");
  if (max_refine_rounds < 0) fail("max_refine_rounds must be >= 0");
  if (folds < 2) fail("folds must be at least 2");
  if (jobs < 1) fail("jobs must be at least 1");
  if (backend.kind == BackendKind::Mock && backend.mock_mode == MockMode::Fixture) need(backend.fixtures, "fixtures");
  backend.validate();
}

std::string RunConfig::canonical() const {
  std::map<std::string, std::string> kv{
      {"cohort", cohort.generic_string()},
      {"experts", experts.generic_string()},
      {"prompts_dir", prompts_dir.generic_string()},
      {"checklist", checklist.generic_string()},
      {"gene_categories", gene_categories.generic_string()},
      {"gene_kb", gene_kb.generic_string()},
      {"backend", backend.kind == BackendKind::Mock ? "mock" : "http"},
      {"mock_mode", backend.mock_mode == MockMode::Oracle ? "oracle" : "fixture"},
      {"fixtures", backend.fixtures.generic_string()},
      {"endpoint", backend.endpoint},
      {"model", backend.model},
      {"vision_model", backend.vision_model},
      {"embedding_model", backend.embedding_model},
      {"embed_dim", std::to_string(backend.embed_dim)},
      {"tau_v", fmt::format("{}", tau_v)},
      {"tau_t", fmt::format("{}", tau_t)},
      {"policy", std::string(wsi::to_string(policy))},
      {"dbscan_eps", fmt::format("{}", dbscan_eps)},
      {"dbscan_min_pts", std::to_string(dbscan_min_pts)},
      {"attention_percentile", fmt::format("{}", attention_percentile)},
      {"max_candidates", std::to_string(max_candidates)},
      {"max_genes", std::to_string(max_genes)},
      {"max_refine_rounds", std::to_string(max_refine_rounds)},
      {"k", std::to_string(k)},
      {"depth", std::to_string(depth)},
      {"w_wsi", fmt::format("{}", w_wsi)},
      {"w_gene", fmt::format("{}", w_gene)},
      {"seed", std::to_string(seed)},
      {"folds", std::to_string(folds)},
  };
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const { return sha256_hex(canonical()); }

}  // namespace prognos
