#include "vlws/ingest.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "vlws/image_io.hpp"
#include "vlws/rng.hpp"

namespace vlws {

std::vector<int> tile_origins(int extent, int tile_size, int stride) {
  if (extent < tile_size) throw std::invalid_argument("scene too small for tile size");
  std::vector<int> origins;
  for (int o = 0; o + tile_size <= extent; o += stride) origins.push_back(o);
  if (origins.back() + tile_size < extent) origins.push_back(extent - tile_size);
  return origins;
}

double count_noninformative(const ImageU8& tile) {
  int64_t dark = 0;
  const int64_t total = int64_t(tile.h) * tile.w;
  for (int64_t j = 0; j < total; ++j) {
    const uint8_t* p = tile.pix.data() + j * 3;
    if (p[0] == 0 && p[1] == 0 && p[2] == 0) ++dark;
  }
  return total == 0 ? 0.0 : double(dark) / double(total);
}

std::vector<Tile> tile_scene(const ImageU8& image, const IndexMask* mask, const TilingConfig& cfg) {
  cfg.validate();
  if (mask && (mask->h != image.h || mask->w != image.w))
    throw std::invalid_argument("tile_scene: image/mask extent mismatch");
  const int t = cfg.tile_size, s = cfg.stride();
  const auto rows = tile_origins(image.h, t, s);
  const auto cols = tile_origins(image.w, t, s);
  std::vector<Tile> out;
  for (int r : rows)
    for (int c : cols) {
      Tile tile;
      tile.row = r;
      tile.col = c;
      tile.image = ImageU8::blank(t, t);
      for (int y = 0; y < t; ++y)
        std::copy_n(image.pix.data() + (size_t(r + y) * image.w + c) * 3, size_t(t) * 3,
                    tile.image.pix.data() + size_t(y) * t * 3);
      if (count_noninformative(tile.image) > cfg.discard_threshold) continue;
      if (mask) {
        IndexMask m = IndexMask::blank(t, t);
        for (int y = 0; y < t; ++y)
          std::copy_n(mask->idx.data() + size_t(r + y) * mask->w + c, size_t(t),
                      m.idx.data() + size_t(y) * t);
        tile.mask = std::move(m);
      }
      out.push_back(std::move(tile));
    }
  return out;
}

std::string crop_name_for_dataset(const std::string& dataset_id) {
  std::string lower;
  for (char ch : dataset_id) lower += static_cast<char>(std::tolower(ch));
  if (lower.find("phenobench") != std::string::npos) return "Sugar beet";
  if (lower.find("rose") != std::string::npos) return "Bean";
  if (lower.find("soy") != std::string::npos) return "Soybean";
  return "Crop";
}

static std::string coverage_bucket(double f) {
  if (f == 0.0) return "absent";
  if (f <= 0.1) return "sparse";
  if (f <= 0.35) return "moderate";
  return "dense";
}

static std::string weed_bucket(double f) {
  if (f == 0.0) return "no";
  if (f <= 0.1) return "scattered";
  if (f <= 0.35) return "moderate";
  return "heavy";
}

// Row structure: >=2 runs of crop-occupied columns separated by empty valleys.
static bool has_row_structure(const IndexMask& mask) {
  std::vector<int> hist(static_cast<size_t>(mask.w), 0);
  for (int r = 0; r < mask.h; ++r)
    for (int c = 0; c < mask.w; ++c)
      if (mask.at(r, c) == 1) ++hist[static_cast<size_t>(c)];
  int runs = 0;
  bool in_run = false;
  for (int v : hist) {
    if (v > 0 && !in_run) {
      ++runs;
      in_run = true;
    } else if (v == 0) {
      in_run = false;
    }
  }
  return runs >= 2;
}

std::string synthesize_caption(const IndexMask& mask, const std::string& dataset_id) {
  const int64_t total = int64_t(mask.h) * mask.w;
  int64_t crop = 0, weed = 0;
  for (uint8_t v : mask.idx) {
    if (v == 1) ++crop;
    else if (v == 2) ++weed;
  }
  const double fc = total ? double(crop) / double(total) : 0.0;
  const double fw = total ? double(weed) / double(total) : 0.0;
  const std::string layout = has_row_structure(mask) ? "row-structured" : "irregular layout";
  return crop_name_for_dataset(dataset_id) + " " + coverage_bucket(fc) + " with " +
         weed_bucket(fw) + " weeds, " + layout + ".";
}

std::vector<CatalogEntry> Catalog::split(const std::string& split_name) const {
  std::vector<CatalogEntry> out;
  for (const auto& e : entries)
    if (e.split == split_name) out.push_back(e);
  return out;
}

std::vector<CatalogEntry> Catalog::split_of(const std::string& dataset_id,
                                            const std::string& split_name) const {
  std::vector<CatalogEntry> out;
  for (const auto& e : entries)
    if (e.dataset_id == dataset_id && e.split == split_name) out.push_back(e);
  return out;
}

std::vector<std::string> Catalog::dataset_ids() const {
  std::set<std::string> ids;
  for (const auto& e : entries) ids.insert(e.dataset_id);
  return {ids.begin(), ids.end()};
}

static std::string read_first_line(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open caption file: " + path);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

Catalog build_catalog(const std::vector<DatasetManifest>& manifests) {
  Catalog cat;
  std::map<std::string, std::set<std::string>> split_by_image;  // cross-split disjointness
  for (const auto& m : manifests) {
    for (const auto& me : m.entries) {
      CatalogEntry e;
      e.dataset_id = m.dataset_id;
      e.split = m.split;
      e.image_path = me.image_path;
      e.mask_path = me.mask_path;
      if (!me.caption_ref.empty()) {
        // External captions override synthesis.
        if (me.caption_ref.rfind("inline:", 0) == 0)
          e.caption = me.caption_ref.substr(7);
        else
          e.caption = read_first_line(me.caption_ref);
      }
      auto [it, fresh] = split_by_image.emplace(e.key(), std::set<std::string>{e.split});
      if (!fresh) {
        if (!it->second.count(e.split))
          throw std::runtime_error("sample appears in more than one split: " + e.key());
        throw std::runtime_error("duplicate sample: " + e.key());
      }
      cat.entries.push_back(std::move(e));
    }
  }
  return cat;
}

Catalog subsample_target(const Catalog& catalog, const std::string& target_id, double fraction,
                         uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::invalid_argument("subsample_target: fraction must be in (0,1]");
  bool found = false;
  std::vector<size_t> target_train;
  for (size_t i = 0; i < catalog.entries.size(); ++i) {
    if (catalog.entries[i].dataset_id == target_id) {
      found = true;
      if (catalog.entries[i].split == "train") target_train.push_back(i);
    }
  }
  if (!found) throw std::invalid_argument("subsample_target: unknown dataset: " + target_id);

  // One seeded permutation over a stably ordered index list; every fraction
  // keeps a prefix, so smaller fractions nest inside larger ones.
  std::sort(target_train.begin(), target_train.end(), [&](size_t a, size_t b) {
    return catalog.entries[a].key() < catalog.entries[b].key();
  });
  Rng rng(mix64(seed, fnv1a64(target_id.data(), target_id.size())));
  rng.shuffle(target_train);
  const size_t keep = static_cast<size_t>(fraction * double(target_train.size()));
  std::set<size_t> kept(target_train.begin(), target_train.begin() + static_cast<long>(keep));

  Catalog out;
  for (size_t i = 0; i < catalog.entries.size(); ++i) {
    const auto& e = catalog.entries[i];
    if (e.dataset_id == target_id && e.split == "train" && !kept.count(i)) continue;
    out.entries.push_back(e);
  }
  return out;
}

SampleRecord load_sample(const CatalogEntry& entry, const ClassPalette& palette) {
  if (entry.inline_sample) return *entry.inline_sample;
  SampleRecord s;
  s.dataset_id = entry.dataset_id;
  s.image = read_image(entry.image_path);
  if (entry.mask_path.empty())
    throw std::runtime_error("load_sample: entry has no mask: " + entry.key());
  s.mask = decode_mask(read_image(entry.mask_path), palette);
  s.caption = entry.caption.empty() ? synthesize_caption(s.mask, s.dataset_id) : entry.caption;
  return s;
}

}  // namespace vlws
