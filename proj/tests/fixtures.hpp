#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vlws/ingest.hpp"
#include "vlws/rng.hpp"

namespace vlws::testing {

// Synthetic field tile: brown soil background, green crop bands, red-ish weed
// blobs. Image pixels are class-correlated so tiny models can overfit.
inline SampleRecord make_sample(int h, int w, uint64_t seed, const std::string& dataset_id) {
  Rng rng(seed);
  SampleRecord s;
  s.dataset_id = dataset_id;
  s.image = ImageU8::blank(h, w);
  s.mask = IndexMask::blank(h, w);
  const int band = std::max(2, w / 4);
  const int band_off = static_cast<int>(rng.below(static_cast<uint64_t>(band)));
  const int blob_r = static_cast<int>(rng.below(static_cast<uint64_t>(h)));
  const int blob_c = static_cast<int>(rng.below(static_cast<uint64_t>(w)));
  const int blob_rad = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(std::max(2, h / 6))));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const bool in_band = ((c + band_off) / band) % 2 == 0;
      const int dr = r - blob_r, dc = c - blob_c;
      const bool in_blob = dr * dr + dc * dc <= blob_rad * blob_rad;
      uint8_t cls = 0;
      uint8_t pix[3] = {70, 50, 30};
      if (in_blob) {
        cls = 2;
        pix[0] = 200;
        pix[1] = 40;
        pix[2] = 30;
      } else if (in_band) {
        cls = 1;
        pix[0] = 30;
        pix[1] = 200;
        pix[2] = 40;
      }
      s.mask.at(r, c) = cls;
      for (int ch = 0; ch < 3; ++ch) s.image.at(r, c, ch) = pix[ch];
    }
  s.caption = synthesize_caption(s.mask, dataset_id);
  return s;
}

inline CatalogEntry make_inline_entry(int h, int w, uint64_t seed, const std::string& dataset_id,
                                      const std::string& split, int index) {
  CatalogEntry e;
  e.dataset_id = dataset_id;
  e.split = split;
  e.image_path = "mem://" + dataset_id + "/" + split + "/" + std::to_string(index);
  e.inline_sample = std::make_shared<SampleRecord>(make_sample(h, w, seed, dataset_id));
  e.caption = e.inline_sample->caption;
  return e;
}

inline Catalog make_inline_catalog(const std::vector<std::string>& dataset_ids, int train_per,
                                   int val_per, int h, int w, uint64_t seed = 1) {
  Catalog cat;
  int index = 0;
  for (const auto& id : dataset_ids) {
    for (int i = 0; i < train_per; ++i)
      cat.entries.push_back(make_inline_entry(h, w, seed + uint64_t(index), id, "train", index)),
          ++index;
    for (int i = 0; i < val_per; ++i)
      cat.entries.push_back(make_inline_entry(h, w, seed + uint64_t(index), id, "val", index)),
          ++index;
  }
  return cat;
}

}  // namespace vlws::testing
