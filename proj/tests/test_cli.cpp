#include <doctest.h>

#include <sstream>

#include "cli.hpp"
#include "prognos/config.hpp"
#include "prognos/error.hpp"
#include "prognos/km_plot.hpp"
#include "support.hpp"

using namespace prognos;
using namespace prognos::testing;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

/// Bundled cohort config with absolute paths and a private output directory.
fs::path bundled_config(const TempDir& tmp, const std::string& extra = {}) {
  const fs::path root = source_dir();
  const fs::path data = bundled_cohort();
  std::string text = "cohort = \"" + (data / "cohort.json").string() + "\"\n" +
                     "experts = \"" + (data / "experts.csv").string() + "\"\n" +
                     "output_dir = \"" + (tmp / "out").string() + "\"\n" +
                     "prompts_dir = \"" + (root / "prompts").string() + "\"\n" +
                     "checklist = \"" + (root / "resources/wsi_checklist.txt").string() + "\"\n" +
                     "gene_categories = \"" + (root / "resources/gene_categories.json").string() + "\"\n" +
                     "gene_kb = \"" + (root / "resources/gene_kb.json").string() + "\"\n" +
                     "backend = \"mock\"\nmock_mode = \"oracle\"\nembed_dim = 64\n" + extra;
  write_file(tmp / "config.toml", text);
  return tmp / "config.toml";
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  auto r = run({"evaluate"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--config") != std::string::npos);

  TempDir tmp("cli_usage");
  const auto cfg = bundled_config(tmp);
  r = run({"evaluate", "--config", cfg.string(), "--frobnicate"});
  CHECK(r.code == 1);
  CHECK(run({}).code == 1);
  CHECK(run({"bogus"}).code == 1);
  CHECK(run({"infer", "--config", cfg.string(), "--backend", "carrier-pigeon"}).code == 1);
  CHECK(run({"--version"}).code == 0);
}

TEST_CASE("a missing cohort is a runtime error") {
  TempDir tmp("cli_runtime");
  write_file(tmp / "config.toml", "cohort = \"nowhere.json\"\nexperts = \"nowhere.csv\"\n");
  const auto r = run({"build-bank", "--config", (tmp / "config.toml").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("plot renders one step polyline per group") {
  TempDir tmp("cli_plot");
  stats::KmCurve a, b;
  a.times = {0.0, 5.0, 9.0};
  a.survival = {1.0, 0.5, 0.0};
  a.at_risk = {4, 4, 2};
  a.deaths = {0, 2, 1};
  a.censored = {0, 1, 1};
  b.times = {0.0, 12.0};
  b.survival = {1.0, 0.75};
  b.at_risk = {4, 4};
  b.deaths = {0, 1};
  b.censored = {0, 3};
  plot::write_km_csv({{"high", a}, {"low", b}}, tmp / "km.csv");

  const auto r = run({"plot", "--km-csv", (tmp / "km.csv").string(), "--out", (tmp / "km.svg").string()});
  REQUIRE(r.code == 0);
  const std::string svg = read_file(tmp / "km.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(count_of(svg, "<polyline") == 2);
  CHECK(count_of(svg, "class=\"km-step\"") == 2);
}

TEST_CASE("config parsing rejects typos and duplicates") {
  TempDir tmp("cli_config");
  write_file(tmp / "a.toml", "cohort = \"c.json\"\nexperts = \"e.csv\"\ntau_vv = 0.9\n");
  CHECK_THROWS_AS(load_run_config(tmp / "a.toml"), Error);
  CHECK_THROWS_AS(parse_kv_config("k = 3\nk = 4\n"), Error);
  CHECK_THROWS_AS(parse_kv_config("just words\n"), Error);

  const auto kv = parse_kv_config("# note\nname = \"a # b\"  # trailing\nflag = true\n");
  CHECK(kv.at("name") == "a # b");
  CHECK(kv.at("flag") == "true");

  write_file(tmp / "b.toml", "cohort = \"c.json\"\nexperts = \"e.csv\"\nw_wsi = 0.7\nw_gene = 0.7\n");
  CHECK_THROWS_AS(load_run_config(tmp / "b.toml").validate(), Error);

  write_file(tmp / "sub/c.toml", "cohort = \"c.json\"\nexperts = \"e.csv\"\nk = 5\n");
  const auto cfg = load_run_config(tmp / "sub/c.toml");
  CHECK(cfg.k == 5);
  CHECK(cfg.cohort == tmp / "sub/c.json");
  CHECK(cfg.hash() == load_run_config(tmp / "sub/c.toml").hash());
}

TEST_CASE("evaluate on the bundled cohort writes the tables") {
  TempDir tmp("cli_eval");
  const auto cfg = bundled_config(tmp, "folds = 5\nseed = 7\njobs = 4\n");
  const auto r = run({"evaluate", "--config", cfg.string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("C-index") != std::string::npos);
  const std::string table = read_file(tmp / "out/eval/cindex.csv");
  CHECK(table.rfind("fold,n_test,c_index\n", 0) == 0);
  CHECK(count_of(table, "\nfold") == 5);
  CHECK(table.find("mean_std,25,") != std::string::npos);
  CHECK(fs::exists(tmp / "out/eval/km.csv"));
  CHECK(fs::exists(tmp / "out/eval/logrank.csv"));
  CHECK(fs::exists(tmp / "out/run_manifest.json"));
}
