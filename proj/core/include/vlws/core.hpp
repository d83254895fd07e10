#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vlws/tensor.hpp"

namespace vlws {

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

struct PaletteEntry {
  std::string name;
  Rgb color;
  int index = 0;
};

// Canonical 3-class palette: background(0,black), crop(1,green), weed(2,red).
struct ClassPalette {
  std::vector<PaletteEntry> classes;

  int num_classes() const { return static_cast<int>(classes.size()); }
  static ClassPalette canonical() {
    return ClassPalette{{{"background", {0, 0, 0}, 0}, {"crop", {0, 255, 0}, 1},
                         {"weed", {255, 0, 0}, 2}}};
  }
  void validate() const;  // throws on violated invariants
};

// 8-bit RGB image, H x W x 3, row-major.
struct ImageU8 {
  int h = 0, w = 0;
  std::vector<uint8_t> pix;  // h*w*3

  uint8_t& at(int r, int c, int ch) { return pix[(size_t(r) * w + c) * 3 + ch]; }
  uint8_t at(int r, int c, int ch) const { return pix[(size_t(r) * w + c) * 3 + ch]; }
  static ImageU8 blank(int h, int w) { return ImageU8{h, w, std::vector<uint8_t>(size_t(h) * w * 3, 0)}; }
};

// H x W class-index mask.
struct IndexMask {
  int h = 0, w = 0;
  std::vector<uint8_t> idx;

  uint8_t& at(int r, int c) { return idx[size_t(r) * w + c]; }
  uint8_t at(int r, int c) const { return idx[size_t(r) * w + c]; }
  static IndexMask blank(int h, int w) { return IndexMask{h, w, std::vector<uint8_t>(size_t(h) * w, 0)}; }
};

// One image tile + mask + caption + provenance; the unit of training/eval.
struct SampleRecord {
  ImageU8 image;
  IndexMask mask;
  std::string caption;
  std::string dataset_id;
  std::optional<std::pair<int, int>> tile_origin;  // (row, col) in source scene
};

struct Violation {
  std::string invariant;
  std::string location;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_sample(const SampleRecord& s, const ClassPalette& palette);

// C x H x W softmax probabilities (values in [0,1], channels summing to 1).
struct ProbabilityMap {
  Tensor p;  // {C,H,W}
  void validate(double tol = 1e-5) const;
};

// C x H x W one-hot labels.
struct OneHotMask {
  Tensor y;  // {C,H,W}
};

OneHotMask mask_to_onehot(const IndexMask& mask, int num_classes);
IndexMask onehot_argmax(const OneHotMask& y);

// ---------------------------------------------------------------------------
// Dataset manifest: line-oriented key=value text.
//   dataset_id=...
//   split=train|val
//   gsd=...
//   image=<path>\tmask=<path>\tcaption=<path|inline:...>
struct ManifestEntry {
  std::string image_path;
  std::string mask_path;
  std::string caption_ref;  // file path or "inline:<text>"
};

struct DatasetManifest {
  std::string dataset_id;
  std::string split;  // "train" or "val"
  double gsd_mm_per_px = 0.0;
  std::vector<ManifestEntry> entries;
  ClassPalette palette = ClassPalette::canonical();
};

DatasetManifest parse_manifest(const std::string& path);
void write_manifest(const DatasetManifest& m, const std::string& path);

}  // namespace vlws
