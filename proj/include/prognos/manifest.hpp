#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prognos/datamodel.hpp"

namespace prognos {

struct SlideLevel {
  int level = 2;
  Magnification magnification = Magnification::X10;
  std::vector<PatchRecord> tiles;
};

/// A slide's pyramid as delivered by preprocessing. Image and embedding paths
/// in the JSON are relative to the manifest's directory; after loading,
/// `PatchRecord::image_ref` holds a resolved path.
struct SlideManifest {
  std::string slide_id;
  fs::path directory;
  std::vector<SlideLevel> levels;
  std::map<std::string, std::string> meta;  // slide-level preprocessing metadata
  bool level3_synthetic = false;

  const SlideLevel* find_level(int level) const;
  SlideLevel* find_level(int level);
  const PatchRecord* find_patch(const std::string& patch_id) const;
};

/// Parses the manifest and attaches embeddings from each tile's sidecar.
/// Embeddings are L2-normalized on load. Throws Error(Io / Parse).
SlideManifest load_slide_manifest(const fs::path& path);

/// Writes manifest JSON plus one embedding sidecar per level
/// (`emb_level<L>.vec`, ids = patch ids) into `manifest.directory`.
void save_slide_manifest(const SlideManifest& manifest, const fs::path& path);

/// True when the file starts with a PNG or JPEG signature.
bool is_readable_image(const fs::path& path);

struct PixelBox {
  long x = 0;
  long y = 0;
  long width = 0;
  long height = 0;

  bool operator==(const PixelBox&) const = default;
};

/// Non-overlapping windows of `window` px covering `box`, row-major. A
/// remainder strip narrower than `min_remainder` is discarded; a wider one
/// becomes a clipped window.
std::vector<PixelBox> retile(const PixelBox& box, long window = 512, long min_remainder = 256);

/// Footprint of a level-2 patch in level-1 pixel coordinates (x2 scale).
PixelBox level1_footprint(const PatchRecord& level2_patch);

/// Level-1 tiles whose top-left corner lies inside the parent's level-1
/// footprint, in manifest order.
std::vector<PatchRecord> subtiles_of(const SlideManifest& manifest, const PatchRecord& parent);

/// Ensures a level-3 (x2.5) composite exists. When the manifest lacks one, the
/// level-2 tiles are stitched into a mosaic, downsampled x4 and written to
/// `out_dir`; the manifest gains a synthetic level 3 and `level3_synthetic`.
void ensure_level3_image(SlideManifest& manifest, const fs::path& out_dir);

}  // namespace prognos
