#include <doctest.h>

#include "prognos/error.hpp"
#include "prognos/manifest.hpp"
#include "support.hpp"

using namespace prognos;
using namespace prognos::testing;

namespace {

fs::path bundled_manifest(const std::string& id) { return bundled_cohort() / "cases" / id / "slide" / "manifest.json"; }

}  // namespace

TEST_CASE("retile covers a box with 512 px windows") {
  auto w = retile({0, 0, 1024, 1024});
  REQUIRE(w.size() == 4);
  CHECK(w[1] == PixelBox{512, 0, 512, 512});
  CHECK(w[2] == PixelBox{0, 512, 512, 512});

  // 1300 = 512 + 512 + 276: the 276 strip is kept, clipped.
  w = retile({0, 0, 1300, 512});
  REQUIRE(w.size() == 3);
  CHECK(w[2] == PixelBox{1024, 0, 276, 512});

  // 1200 leaves a 176 px strip, dropped.
  CHECK(retile({0, 0, 1200, 512}).size() == 2);
  CHECK(retile({100, 200, 100, 100}).empty());
}

TEST_CASE("level-1 footprint doubles coordinates") {
  PatchRecord p;
  p.x = 512;
  p.y = 1024;
  p.width = p.height = 512;
  CHECK(level1_footprint(p) == PixelBox{1024, 2048, 1024, 1024});
}

TEST_CASE("bundled manifest loads with resolved images and unit embeddings") {
  const auto m = load_slide_manifest(bundled_manifest("SYN001"));
  const auto* l2 = m.find_level(2);
  const auto* l1 = m.find_level(1);
  REQUIRE(l2 != nullptr);
  REQUIRE(l1 != nullptr);
  CHECK(l2->tiles.size() == 120);
  CHECK(l1->tiles.size() == 4);
  for (const auto& t : l2->tiles) {
    CHECK(is_unit(t.embedding));
    CHECK(t.attention.has_value());
    CHECK(is_readable_image(t.image_ref));
  }
  CHECK(m.meta.count("grade") == 1);

  // The four sub-tiles sit under exactly one level-2 parent.
  int parents = 0;
  for (const auto& t : l2->tiles) {
    const auto subs = subtiles_of(m, t);
    if (subs.empty()) continue;
    ++parents;
    CHECK(subs.size() == 4);
    CHECK(t.meta.at("ambiguous") == "true");
  }
  CHECK(parents == 1);
}

TEST_CASE("manifest save then load is the identity") {
  TempDir tmp("manifest");
  auto m = load_slide_manifest(bundled_manifest("SYN002"));
  // Copy tile images so the saved manifest is self-contained.
  fs::create_directories(tmp / "tiles");
  for (auto& level : m.levels) {
    for (auto& t : level.tiles) {
      const auto dst = tmp.path / "tiles" / fs::path(t.image_ref).filename();
      fs::copy_file(t.image_ref, dst, fs::copy_options::overwrite_existing);
      t.image_ref = dst.string();
    }
  }
  m.directory = tmp.path;
  save_slide_manifest(m, tmp / "manifest.json");
  const auto back = load_slide_manifest(tmp / "manifest.json");
  CHECK(back.slide_id == m.slide_id);
  CHECK(back.meta == m.meta);
  REQUIRE(back.levels.size() == m.levels.size());
  for (std::size_t i = 0; i < m.levels.size(); ++i) {
    REQUIRE(back.levels[i].tiles.size() == m.levels[i].tiles.size());
    for (std::size_t k = 0; k < m.levels[i].tiles.size(); ++k) {
      const auto& a = m.levels[i].tiles[k];
      const auto& b = back.levels[i].tiles[k];
      CHECK(a.patch_id == b.patch_id);
      CHECK(fs::equivalent(a.image_ref, b.image_ref));
      CHECK(a.embedding == b.embedding);
      CHECK(a.attention == b.attention);
      CHECK(a.meta == b.meta);
    }
  }
}

TEST_CASE("missing level 3 is synthesized from level 2") {
  TempDir tmp("l3");
  auto m = load_slide_manifest(bundled_manifest("SYN003"));
  REQUIRE(m.find_level(3) == nullptr);
  ensure_level3_image(m, tmp.path);
  CHECK(m.level3_synthetic);
  const auto* l3 = m.find_level(3);
  REQUIRE(l3 != nullptr);
  REQUIRE(l3->tiles.size() == 1);
  CHECK(l3->magnification == Magnification::X2_5);
  CHECK(is_readable_image(l3->tiles[0].image_ref));
  CHECK(fs::path(l3->tiles[0].image_ref).parent_path() == tmp.path);
}

TEST_CASE("missing manifest is an Io error") {
  try {
    load_slide_manifest("/nonexistent/manifest.json");
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Io);
  }
}
