#include "prognos/manifest.hpp"

#include <algorithm>
#include <array>
#include <climits>
#include <fstream>
#include <map>
#include <unordered_map>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "prognos/error.hpp"
#include "prognos/vector_file.hpp"

namespace prognos {

using nlohmann::json;

const SlideLevel* SlideManifest::find_level(int level) const {
  for (const auto& l : levels) {
    if (l.level == level) return &l;
  }
  return nullptr;
}

SlideLevel* SlideManifest::find_level(int level) {
  for (auto& l : levels) {
    if (l.level == level) return &l;
  }
  return nullptr;
}

const PatchRecord* SlideManifest::find_patch(const std::string& patch_id) const {
  for (const auto& l : levels) {
    for (const auto& t : l.tiles) {
      if (t.patch_id == patch_id) return &t;
    }
  }
  return nullptr;
}

namespace {

struct SidecarIndex {
  VectorFile file;
  std::unordered_map<std::string, std::size_t> rows;
};

const SidecarIndex& load_sidecar(std::map<fs::path, SidecarIndex>& cache, const fs::path& path) {
  auto it = cache.find(path);
  if (it != cache.end()) return it->second;
  SidecarIndex idx;
  idx.file = read_vector_file(path);
  const auto ids = idx.file.preamble.value("ids", std::vector<std::string>{});
  if (ids.size() != idx.file.count) {
    throw Error(ErrorCode::Parse, path.string() + ": ids[] length differs from count");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) idx.rows.emplace(ids[i], i);
  return cache.emplace(path, std::move(idx)).first->second;
}

std::string meta_value(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace

SlideManifest load_slide_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open slide manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }

  SlideManifest m;
  m.directory = path.parent_path();
  std::map<fs::path, SidecarIndex> sidecars;
  try {
    m.slide_id = doc.at("slide_id").get<std::string>();
    m.level3_synthetic = doc.value("level3_synthetic", false);
    if (doc.contains("meta")) {
      for (const auto& [k, v] : doc.at("meta").items()) m.meta[k] = meta_value(v);
    }
    for (const auto& jl : doc.at("levels")) {
      SlideLevel level;
      level.level = jl.at("level").get<int>();
      const double mag = jl.at("magnification").get<double>();
      const auto parsed = magnification_from_value(mag);
      if (!parsed) throw Error(ErrorCode::Parse, "unsupported magnification " + std::to_string(mag));
      level.magnification = *parsed;
      for (const auto& jt : jl.at("tiles")) {
        PatchRecord p;
        p.patch_id = jt.at("patch_id").get<std::string>();
        p.level = level.level;
        p.magnification = level.magnification;
        p.x = jt.at("x").get<long>();
        p.y = jt.at("y").get<long>();
        p.width = jt.at("w").get<long>();
        p.height = jt.at("h").get<long>();
        p.image_ref = (m.directory / jt.at("image").get<std::string>()).lexically_normal().string();
        if (jt.contains("attention") && !jt.at("attention").is_null()) {
          p.attention = jt.at("attention").get<double>();
        }
        if (jt.contains("meta")) {
          for (const auto& [k, v] : jt.at("meta").items()) p.meta[k] = meta_value(v);
        }
        if (jt.contains("embedding_file") && !jt.at("embedding_file").is_null()) {
          const fs::path sidecar = m.directory / jt.at("embedding_file").get<std::string>();
          const auto& idx = load_sidecar(sidecars, sidecar);
          auto row = idx.rows.find(p.patch_id);
          if (row == idx.rows.end()) {
            throw Error(ErrorCode::Parse, sidecar.string() + ": no row for " + p.patch_id);
          }
          p.embedding = normalized(idx.file.row_copy(row->second));
        }
        level.tiles.push_back(std::move(p));
      }
      m.levels.push_back(std::move(level));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
  return m;
}

void save_slide_manifest(const SlideManifest& manifest, const fs::path& path) {
  const fs::path dir = path.parent_path();
  json levels = json::array();
  for (const auto& level : manifest.levels) {
    const std::string sidecar_name = "emb_level" + std::to_string(level.level) + ".vec";
    std::vector<std::string> ids;
    std::vector<float> data;
    std::size_t dim = 0;
    json tiles = json::array();
    for (const auto& t : level.tiles) {
      json jt{{"patch_id", t.patch_id}, {"x", t.x}, {"y", t.y}, {"w", t.width}, {"h", t.height}};
      fs::path img(t.image_ref);
      // In-memory refs are relative to the working directory, stored ones to the manifest.
      jt["image"] = fs::relative(fs::absolute(img), fs::absolute(dir)).generic_string();
      if (t.attention) jt["attention"] = *t.attention;
      if (!t.meta.empty()) jt["meta"] = t.meta;
      if (!t.embedding.empty()) {
        if (dim == 0) dim = t.embedding.size();
        if (t.embedding.size() != dim) {
          throw Error(ErrorCode::DimensionMismatch, "mixed embedding dims on level " +
                                                        std::to_string(level.level));
        }
        ids.push_back(t.patch_id);
        data.insert(data.end(), t.embedding.begin(), t.embedding.end());
        jt["embedding_file"] = sidecar_name;
      }
      tiles.push_back(std::move(jt));
    }
    if (!ids.empty()) write_vector_file(dir / sidecar_name, json{{"ids", ids}}, dim, data);
    levels.push_back(json{{"level", level.level},
                          {"magnification", magnification_value(level.magnification)},
                          {"tiles", tiles}});
  }
  json doc{{"slide_id", manifest.slide_id}, {"levels", levels}};
  if (!manifest.meta.empty()) doc["meta"] = manifest.meta;
  if (manifest.level3_synthetic) doc["level3_synthetic"] = true;
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

bool is_readable_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::array<unsigned char, 8> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  const auto got = in.gcount();
  static constexpr std::array<unsigned char, 8> kPng = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (got == 8 && head == kPng) return true;
  return got >= 3 && head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF;
}

std::vector<PixelBox> retile(const PixelBox& box, long window, long min_remainder) {
  if (window <= 0) throw Error(ErrorCode::InvalidArgument, "window must be positive");
  auto spans = [&](long origin, long extent) {
    std::vector<std::pair<long, long>> out;
    long off = 0;
    for (; off + window <= extent; off += window) out.emplace_back(origin + off, window);
    const long rest = extent - off;
    if (rest >= min_remainder && rest > 0) out.emplace_back(origin + off, rest);
    return out;
  };
  std::vector<PixelBox> out;
  for (const auto& [y, h] : spans(box.y, box.height)) {
    for (const auto& [x, w] : spans(box.x, box.width)) out.push_back({x, y, w, h});
  }
  return out;
}

PixelBox level1_footprint(const PatchRecord& level2_patch) {
  return {level2_patch.x * 2, level2_patch.y * 2, level2_patch.width * 2, level2_patch.height * 2};
}

std::vector<PatchRecord> subtiles_of(const SlideManifest& manifest, const PatchRecord& parent) {
  std::vector<PatchRecord> out;
  const SlideLevel* l1 = manifest.find_level(1);
  if (!l1) return out;
  const PixelBox fp = level1_footprint(parent);
  for (const auto& t : l1->tiles) {
    if (t.x >= fp.x && t.x < fp.x + fp.width && t.y >= fp.y && t.y < fp.y + fp.height) {
      out.push_back(t);
    }
  }
  return out;
}

void ensure_level3_image(SlideManifest& manifest, const fs::path& out_dir) {
  if (const SlideLevel* l3 = manifest.find_level(3); l3 && !l3->tiles.empty()) return;
  const SlideLevel* l2 = manifest.find_level(2);
  if (!l2 || l2->tiles.empty()) {
    throw Error(ErrorCode::MissingLevelImage,
                manifest.slide_id + ": no level-3 composite and no level-2 tiles to build one");
  }
  long min_x = LONG_MAX, min_y = LONG_MAX, max_x = LONG_MIN, max_y = LONG_MIN;
  for (const auto& t : l2->tiles) {
    min_x = std::min(min_x, t.x);
    min_y = std::min(min_y, t.y);
    max_x = std::max(max_x, t.x + t.width);
    max_y = std::max(max_y, t.y + t.height);
  }
  constexpr long kFactor = 4;
  const int cw = static_cast<int>(std::max(1L, (max_x - min_x + kFactor - 1) / kFactor));
  const int ch = static_cast<int>(std::max(1L, (max_y - min_y + kFactor - 1) / kFactor));
  cv::Mat canvas(ch, cw, CV_8UC3, cv::Scalar(255, 255, 255));
  for (const auto& t : l2->tiles) {
    cv::Mat tile = cv::imread(t.image_ref, cv::IMREAD_COLOR);
    if (tile.empty()) throw Error(ErrorCode::UnreadableImage, t.image_ref);
    const int tx = static_cast<int>((t.x - min_x) / kFactor);
    const int ty = static_cast<int>((t.y - min_y) / kFactor);
    const int tw = std::min(cw - tx, static_cast<int>(std::max(1L, t.width / kFactor)));
    const int th = std::min(ch - ty, static_cast<int>(std::max(1L, t.height / kFactor)));
    if (tw <= 0 || th <= 0) continue;
    cv::Mat scaled;
    cv::resize(tile, scaled, cv::Size(tw, th), 0, 0, cv::INTER_AREA);
    scaled.copyTo(canvas(cv::Rect(tx, ty, tw, th)));
  }
  fs::create_directories(out_dir);
  const fs::path out = out_dir / (manifest.slide_id + "_level3.png");
  if (!cv::imwrite(out.string(), canvas)) throw Error(ErrorCode::Io, "cannot write " + out.string());

  PatchRecord composite;
  composite.patch_id = manifest.slide_id + "_L3";
  composite.level = 3;
  composite.magnification = Magnification::X2_5;
  composite.x = min_x / kFactor;
  composite.y = min_y / kFactor;
  composite.width = cw;
  composite.height = ch;
  composite.image_ref = out.string();
  composite.meta["synthetic"] = "true";
  if (SlideLevel* l3 = manifest.find_level(3)) {
    l3->tiles.push_back(std::move(composite));
  } else {
    manifest.levels.push_back(SlideLevel{3, Magnification::X2_5, {std::move(composite)}});
  }
  manifest.level3_synthetic = true;
}

}  // namespace prognos
