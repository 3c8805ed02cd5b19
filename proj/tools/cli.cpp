#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "prognos/cohort.hpp"
#include "prognos/config.hpp"
#include "prognos/error.hpp"
#include "prognos/km_plot.hpp"
#include "prognos/orchestrator.hpp"
#include "prognos/synthetic.hpp"

namespace prognos::cli {

namespace {

struct Common {
  std::string config;
  std::string backend;
  int jobs = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "run configuration file")->required()->check(CLI::ExistingFile);
  sub->add_option("--backend", c.backend, "override the configured backend")
      ->check(CLI::IsMember({"mock", "http"}));
  sub->add_option("--jobs", c.jobs, "parallel cases (default from config)")->check(CLI::PositiveNumber);
}

RunConfig load(const Common& c) {
  RunConfig cfg = load_run_config(c.config);
  if (c.backend == "mock") cfg.backend.kind = BackendKind::Mock;
  if (c.backend == "http") cfg.backend.kind = BackendKind::Http;
  if (c.jobs > 0) cfg.jobs = c.jobs;
  return cfg;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal survival-analysis agent pipeline", "prognos"};
  app.require_subcommand(1);
  app.set_version_flag("--version", run::kVersion);

  Common common;
  std::string fold = "holdout";
  std::string experts_path;

  auto* build = app.add_subcommand("build-bank", "build the fold's WSI and gene case banks");
  add_common(build, common);
  build->add_option("--fold", fold, "'holdout' or a cross-validation fold index");

  auto* infer = app.add_subcommand("infer", "run inference for the fold's test cases");
  add_common(infer, common);
  infer->add_option("--fold", fold, "'holdout' or a cross-validation fold index");
  infer->add_option("--experts", experts_path, "expert predictions CSV (default from config)")
      ->check(CLI::ExistingFile);

  auto* evaluate = app.add_subcommand("evaluate", "cross-validate and write C-index, KM and log-rank tables");
  add_common(evaluate, common);

  std::string km_csv, svg_out;
  auto* plot = app.add_subcommand("plot", "render a KM CSV as SVG");
  plot->add_option("--km-csv", km_csv, "KM CSV (time,survival,at_risk,group)")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", svg_out, "output SVG path")->required();

  std::string synth_out, assets = ".";
  synth::SynthOptions so;
  auto* synth = app.add_subcommand("synth", "write a synthetic cohort with hidden-ground-truth metadata");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--cases", so.n_cases, "number of cases")->check(CLI::PositiveNumber);
  synth->add_option("--holdout", so.n_holdout, "cases flagged as held out")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", so.seed, "generator seed");
  synth->add_option("--prefix", so.prefix, "case id prefix");
  synth->add_option("--assets", assets, "directory holding prompts/ and resources/")->check(CLI::ExistingDirectory);

  // CLI11 wants argv order reversed when given a vector.
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  try {
    if (plot->parsed()) {
      const auto curves = plot::read_km_csv(km_csv);
      std::ofstream svg(svg_out, std::ios::binary);
      if (!svg) throw Error(ErrorCode::Io, "cannot write " + svg_out);
      svg << plot::render_km_svg(curves);
      out << fmt::format("wrote {} ({} curves)\n", svg_out, curves.size());
      return 0;
    }
    if (synth->parsed()) {
      const auto s = synth::generate(synth_out, so);
      synth::write_config(synth_out, assets, so.seed);
      out << fmt::format("wrote {} cases ({} held out) to {}\n", s.cohort.cases.size(), so.n_holdout, synth_out);
      return 0;
    }

    const auto start = std::chrono::steady_clock::now();
    run::Orchestrator orch(load(common));
    if (build->parsed()) {
      orch.write_run_manifest("build-bank --fold " + fold);
      const auto b = orch.build_bank(orch.plan(fold));
      out << fmt::format("{}: {} WSI + {} gene entries in {}\n", b.plan.name, b.wsi_entries, b.gene_entries,
                         b.dir.string());
      if (!b.force_accepted.empty()) {
        out << fmt::format("{} CoTs force-accepted after the refinement budget\n", b.force_accepted.size());
      }
    } else if (infer->parsed()) {
      orch.write_run_manifest("infer --fold " + fold);
      const auto experts = experts_path.empty() ? orch.experts() : load_experts(experts_path);
      const auto plan = orch.plan(fold);
      const auto results = orch.infer(plan, experts);
      for (const auto& r : results) {
        out << fmt::format("{}  y={}/{}  {}  {:.2f} months  risk {:.3f}\n", r.case_id, r.y.at(0), r.y.at(1),
                           interval_label(r.final_interval), r.predicted_months, r.risk_score);
      }
      out << fmt::format("results in {}\n", (orch.fold_dir(plan) / "results").string());
    } else if (evaluate->parsed()) {
      orch.write_run_manifest("evaluate");
      const auto ev = orch.evaluate();
      for (const auto& f : ev.folds) {
        out << fmt::format("{}: n={} C-index {}\n", f.plan.name, f.results.size(),
                           f.c_index ? fmt::format("{:.3f}", *f.c_index) : std::string("NA"));
      }
      out << fmt::format("C-index {}\n", stats::format_mean_std(ev.c_index));
      if (ev.logrank) out << fmt::format("log-rank chi2 {:.3f} p {:.3g}\n", ev.logrank->chi2, ev.logrank->p);
      for (const auto& w : ev.warnings) err << "warning: " << w << '\n';
      out << fmt::format("tables in {}\n", ev.dir.string());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    err << fmt::format("done in {:.1f} s\n", secs);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace prognos::cli
