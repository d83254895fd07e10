#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "vlws/core.hpp"

namespace vlws {

struct TilingConfig {
  int tile_size = 512;
  double overlap_fraction = 0.25;
  double discard_threshold = 0.5;

  int stride() const {
    const int s = static_cast<int>(std::lround(tile_size * (1.0 - overlap_fraction)));
    if (s < 1) throw std::invalid_argument("tiling: stride must be >= 1");
    return s;
  }
  void validate() const {
    if (tile_size < 1) throw std::invalid_argument("tiling: tile_size must be positive");
    if (overlap_fraction < 0.0 || overlap_fraction >= 1.0)
      throw std::invalid_argument("tiling: overlap_fraction must be in [0,1)");
    if (discard_threshold < 0.0 || discard_threshold > 1.0)
      throw std::invalid_argument("tiling: discard_threshold must be in [0,1]");
    (void)stride();
  }
};

struct Tile {
  ImageU8 image;
  std::optional<IndexMask> mask;
  int row = 0, col = 0;  // origin in the source scene
};

// Regular grid origins {0, s, 2s, ...} per axis, plus one edge-anchored tile
// at extent - tile_size when the grid leaves a remainder (full coverage).
std::vector<int> tile_origins(int extent, int tile_size, int stride);

// Fraction of all-zero (nodata) pixels.
double count_noninformative(const ImageU8& tile);

// Row-major tiles; those whose non-informative fraction exceeds
// cfg.discard_threshold are dropped.
std::vector<Tile> tile_scene(const ImageU8& image, const IndexMask* mask, const TilingConfig& cfg);

// Deterministic template caption from the mask statistics.
std::string synthesize_caption(const IndexMask& mask, const std::string& dataset_id);
std::string crop_name_for_dataset(const std::string& dataset_id);

// ---------------------------------------------------------------------------
// Catalog of samples across datasets and splits.

struct CatalogEntry {
  std::string dataset_id;
  std::string split;  // train | val
  std::string image_path;
  std::string mask_path;
  std::string caption;                      // resolved text
  std::shared_ptr<SampleRecord> inline_sample;  // synthetic fixtures bypass disk

  std::string key() const { return dataset_id + "|" + image_path; }
};

struct Catalog {
  std::vector<CatalogEntry> entries;

  std::vector<CatalogEntry> split(const std::string& split_name) const;
  std::vector<CatalogEntry> split_of(const std::string& dataset_id,
                                     const std::string& split_name) const;
  std::vector<std::string> dataset_ids() const;  // sorted unique
};

// Union of manifests with provenance preserved. Caption resolution: sidecar
// file / inline caption when given, template synthesis otherwise.
Catalog build_catalog(const std::vector<DatasetManifest>& manifests);

// Keeps floor(fraction * N) seeded-uniform target train samples; source
// datasets and the target validation split are untouched. Subsets nest
// across fractions for a fixed seed (prefixes of one seeded permutation).
Catalog subsample_target(const Catalog& catalog, const std::string& target_id, double fraction,
                         uint64_t seed);

// Materializes pixels (and a caption if the entry has none).
SampleRecord load_sample(const CatalogEntry& entry, const ClassPalette& palette);

}  // namespace vlws
