#include "prognos/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "prognos/error.hpp"
#include "prognos/manifest.hpp"
#include "prognos/mock_backend.hpp"

namespace prognos::synth {

const std::vector<std::pair<GeneCategory, std::vector<std::string>>>& gene_panel() {
  static const std::vector<std::pair<GeneCategory, std::vector<std::string>>> kPanel = {
      {GeneCategory::TumorSuppressor, {"TP53", "RB1", "PTEN", "CDKN2A", "KDM6A", "ARID1A", "TSC1", "STAG2"}},
      {GeneCategory::Oncogene, {"ERBB2", "PIK3CA", "HRAS", "KRAS", "MYC", "CCND1", "E2F3", "MDM2"}},
      {GeneCategory::ProteinKinase, {"FGFR3", "EGFR", "MTOR", "AKT1", "CDK4", "ATM", "BRAF", "ERBB3"}},
      {GeneCategory::DifferentiationMarker, {"KRT5", "KRT14", "KRT20", "UPK1B", "UPK2", "GATA3", "CD44", "FOXA1"}},
      {GeneCategory::TranscriptionFactor, {"ELF3", "TP63", "PPARG", "RXRA", "NFE2L2", "FOXQ1", "TBX3", "ZNF703"}},
      {GeneCategory::CytokineGrowthFactor, {"TGFB1", "VEGFA", "IL6", "CXCL8", "FGF2", "EGF", "CSF1", "TNF"}},
  };
  return kPanel;
}

namespace {

constexpr long kTile = 512;

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
double normal(Rng& rng, double sd) { return std::normal_distribution<double>(0.0, sd)(rng); }
bool coin(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

std::vector<float> random_unit(Rng& rng, int dim) {
  std::vector<float> v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = static_cast<float>(normal(rng, 1.0));
  return normalized(std::move(v));
}

// Flat tissue colour plus a little per-pixel noise so tiles are not identical.
void write_tile(const fs::path& path, const std::string& tissue, int px, Rng& rng) {
  cv::Vec3b base;
  if (tissue == "tumor") base = {150, 60, 140};
  else if (tissue == "necrosis") base = {190, 170, 220};
  else if (tissue == "lymphoid") base = {160, 40, 70};
  else if (tissue == "muscle") base = {120, 110, 210};
  else if (tissue == "background") base = {245, 245, 245};
  else base = {200, 150, 225};
  cv::Mat img(px, px, CV_8UC3);
  for (int r = 0; r < px; ++r) {
    for (int c = 0; c < px; ++c) {
      cv::Vec3b p;
      for (int k = 0; k < 3; ++k) {
        p[k] = static_cast<unsigned char>(std::clamp(static_cast<int>(base[k]) + static_cast<int>(normal(rng, 8.0)), 0, 255));
      }
      img.at<cv::Vec3b>(r, c) = p;
    }
  }
  if (!cv::imwrite(path.string(), img)) throw Error(ErrorCode::Io, "cannot write " + path.string());
}

struct BlockSlot {
  std::string tissue;
  std::string pattern;
  std::string grade;
  bool ambiguous = false;
};

// The twelve high-attention tiles: distinct tumor architectures plus the
// surrounding tissue types whose reports feed the checklist.
std::vector<BlockSlot> block_slots(const std::string& grade) {
  return {
      {"tumor", "solid nests", grade, false},
      {"tumor", "papillary fronds over fibrovascular cores", grade, false},
      {"tumor", "infiltrating single cords within reactive desmoplasia", grade, false},
      {"tumor", "trabecular sheets", "high", false},
      {"tumor", "discohesive clusters", grade, true},
      {"necrosis", "", "", false},
      {"nerve", "", "", false},
      {"vessel", "", "", false},
      {"muscle", "", "", false},
      {"lymphoid", "", "", false},
      {"spindle", "", "", false},
      {"stroma", "", "", false},
  };
}

const std::vector<std::string>& subtile_patterns() {
  static const std::vector<std::string> kPatterns = {
      "spindle cell fascicles", "storiform whorls of atypical cells", "pleomorphic giant cells",
      "myxoid matrix with scattered malignant cells"};
  return kPatterns;
}

}  // namespace

SynthCohort generate(const fs::path& out_dir, const SynthOptions& o) {
  if (o.n_cases < 1 || o.n_holdout < 0 || o.n_holdout >= o.n_cases) {
    throw Error(ErrorCode::InvalidArgument, "synthetic cohort needs n_cases >= 1 and 0 <= n_holdout < n_cases");
  }
  if (o.grid_cols < 4 || o.grid_rows < 3) throw Error(ErrorCode::InvalidArgument, "grid must be at least 4x3");
  fs::create_directories(out_dir);
  Rng rng(o.seed);

  SynthCohort out;
  out.cohort.name = o.prefix + "-synthetic";
  out.cohort.file = fs::absolute(out_dir / "cohort.json");

  const int width = std::max(3, static_cast<int>(std::to_string(o.n_cases).size()));
  for (int i = 0; i < o.n_cases; ++i) {
    const std::string id = fmt::format("{}{:0{}}", o.prefix, i + 1, width);
    const fs::path case_dir = out_dir / "cases" / id;
    const fs::path slide_dir = case_dir / "slide";
    fs::create_directories(slide_dir / "tiles");

    // Ground truth.
    const double t_true = std::exp(uniform(rng, std::log(o.min_months), std::log(o.max_months)));
    const double t_cens = uniform(rng, o.censor_lo, o.censor_hi);
    SurvivalLabel label{std::min(t_true, t_cens), t_true <= t_cens};
    label.time_months = std::round(label.time_months * 100.0) / 100.0;
    const double mitotic = oracle_rules::mitotic_index_for_months(t_true) + normal(rng, o.mitotic_noise);
    const std::string mitotic_s = fmt::format("{:.1f}", std::max(0.1, mitotic));
    const bool aggressive = t_true < 24.0;

    SlideManifest m;
    m.slide_id = id + "_WSI";
    m.directory = slide_dir;
    m.meta["grade"] = coin(rng, aggressive ? 0.85 : 0.25) ? "high" : "low";
    m.meta["depth"] = coin(rng, aggressive ? 0.8 : 0.3) ? "muscularis propria" : "lamina propria";
    m.meta["perineural"] = coin(rng, aggressive ? 0.6 : 0.15) ? "true" : "false";
    m.meta["lvi"] = coin(rng, aggressive ? 0.6 : 0.15) ? "true" : "false";
    m.meta["necrosis_pct"] = std::to_string(static_cast<int>(uniform(rng, aggressive ? 15 : 2, aggressive ? 40 : 15)));
    static const char* kLymph[] = {"brisk", "moderate", "sparse"};
    m.meta["lymphocytes"] = kLymph[static_cast<int>(uniform(rng, 0.0, 3.0)) % 3];

    // Level 2 grid with one high-attention 3x4 block.
    SlideLevel l2{2, Magnification::X10, {}};
    const int r0 = static_cast<int>(uniform(rng, 0.0, o.grid_rows - 2.0));
    const int c0 = static_cast<int>(uniform(rng, 0.0, o.grid_cols - 3.0));
    auto slots = block_slots(m.meta["grade"]);
    std::shuffle(slots.begin(), slots.end(), rng);
    std::size_t next_slot = 0;
    const PatchRecord* ambiguous_parent = nullptr;
    std::string ambiguous_id;
    for (int r = 0; r < o.grid_rows; ++r) {
      for (int c = 0; c < o.grid_cols; ++c) {
        PatchRecord p;
        p.patch_id = fmt::format("{}_L2_r{}c{}", id, r, c);
        p.level = 2;
        p.magnification = Magnification::X10;
        p.x = c * kTile;
        p.y = r * kTile;
        p.width = kTile;
        p.height = kTile;
        p.embedding = random_unit(rng, o.visual_dim);
        const bool in_block = r >= r0 && r < r0 + 3 && c >= c0 && c < c0 + 4;
        std::string tissue;
        if (in_block) {
          const BlockSlot& s = slots[next_slot++];
          tissue = s.tissue;
          p.attention = uniform(rng, 0.8, 1.0);
          p.meta["tissue"] = s.tissue;
          if (s.tissue == "tumor") {
            p.meta["pattern"] = s.pattern;
            p.meta["grade"] = s.grade;
            p.meta["mitotic_index"] = mitotic_s;
          }
          if (s.ambiguous) {
            p.meta["ambiguous"] = "true";
            ambiguous_id = p.patch_id;
          }
        } else {
          tissue = coin(rng, 0.3) ? "background" : "stroma";
          p.attention = uniform(rng, 0.0, 0.5);
          p.meta["tissue"] = tissue == "background" ? "stroma" : tissue;
        }
        const fs::path img = slide_dir / "tiles" / (p.patch_id + ".png");
        write_tile(img, tissue, o.tile_px, rng);
        p.image_ref = img.string();
        l2.tiles.push_back(std::move(p));
      }
    }
    for (const auto& t : l2.tiles) {
      if (t.patch_id == ambiguous_id) ambiguous_parent = &t;
    }

    // Level 1: the four x20 sub-tiles under the ambiguous tumor patch.
    SlideLevel l1{1, Magnification::X20, {}};
    if (ambiguous_parent) {
      const PixelBox fp = level1_footprint(*ambiguous_parent);
      const auto boxes = retile(fp);
      for (std::size_t k = 0; k < boxes.size(); ++k) {
        PatchRecord p;
        p.patch_id = fmt::format("{}_L1_s{}", id, k);
        p.level = 1;
        p.magnification = Magnification::X20;
        p.x = boxes[k].x;
        p.y = boxes[k].y;
        p.width = boxes[k].width;
        p.height = boxes[k].height;
        p.embedding = random_unit(rng, o.visual_dim);
        p.meta["tissue"] = "tumor";
        p.meta["grade"] = m.meta["grade"];
        p.meta["pattern"] = subtile_patterns()[k % subtile_patterns().size()];
        p.meta["lesion"] = "sarcomatoid";
        p.meta["mitotic_index"] = mitotic_s;
        const fs::path img = slide_dir / "tiles" / (p.patch_id + ".png");
        write_tile(img, "tumor", o.tile_px, rng);
        p.image_ref = img.string();
        l1.tiles.push_back(std::move(p));
      }
    }
    m.levels.push_back(std::move(l2));
    m.levels.push_back(std::move(l1));
    save_slide_manifest(m, slide_dir / "manifest.json");

    // Gene profile: noise plus a mild prognosis-linked shift on a few genes.
    GeneProfile g;
    const double z = -std::log(t_true / 12.0);
    for (const auto& [cat, symbols] : gene_panel()) {
      for (const auto& s : symbols) {
        GeneRecord r{s, normal(rng, 1.0), coin(rng, 0.12)};
        if (s == "TP53" || s == "MYC" || s == "VEGFA") r.expression += 0.5 * z;
        if (s == "TP53" && coin(rng, aggressive ? 0.6 : 0.2)) r.mutated = true;
        r.expression = std::round(r.expression * 1000.0) / 1000.0;
        g.genes.push_back(std::move(r));
      }
    }
    save_gene_profile(g, case_dir / "genes.tsv");

    CaseRecord rec;
    rec.case_id = id;
    rec.slide_manifest = fs::absolute(slide_dir / "manifest.json");
    rec.gene_profile = fs::absolute(case_dir / "genes.tsv");
    rec.label = label;
    rec.holdout = i >= o.n_cases - o.n_holdout;
    out.cohort.cases.push_back(std::move(rec));
    out.true_months.push_back(t_true);

    for (const char* model : kExpertModels) {
      const double risk = -std::log(t_true / 12.0) + normal(rng, o.expert_noise);
      out.experts.push_back({id, model, std::round(risk * 1e6) / 1e6});
    }
  }
  save_cohort(out.cohort, out_dir / "cohort.json");
  save_experts(out.experts, out_dir / "experts.csv");
  return out;
}

void write_config(const fs::path& out_dir, const fs::path& assets, std::uint64_t seed, const std::string& extra) {
  const fs::path base = fs::absolute(out_dir);
  const fs::path rel = fs::relative(fs::absolute(assets), base);
  std::ofstream out(out_dir / "config.toml");
  if (!out) throw Error(ErrorCode::Io, "cannot write " + (out_dir / "config.toml").string());
  out << "# Synthetic cohort run (mock backend, oracle mode)\n"
      << "cohort = \"cohort.json\"\n"
      << "experts = \"experts.csv\"\n"
      << "output_dir = \"out\"\n"
      << fmt::format("prompts_dir = \"{}\"\n", (rel / "prompts").generic_string())
      << fmt::format("checklist = \"{}\"\n", (rel / "resources" / "wsi_checklist.txt").generic_string())
      << fmt::format("gene_categories = \"{}\"\n", (rel / "resources" / "gene_categories.json").generic_string())
      << fmt::format("gene_kb = \"{}\"\n", (rel / "resources" / "gene_kb.json").generic_string())
      << "\nbackend = \"mock\"\nmock_mode = \"oracle\"\nembed_dim = 64\n"
      << "\ntau_v = 0.93\ntau_t = 0.93\npolicy = \"literal\"\nk = 3\ndepth = 2\n"
      << "w_wsi = 0.5\nw_gene = 0.5\nfolds = 5\n"
      << fmt::format("seed = {}\n", seed) << "jobs = 4\n"
      << extra;
}

}  // namespace prognos::synth
