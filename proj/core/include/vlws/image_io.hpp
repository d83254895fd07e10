#pragma once

#include <string>

#include "vlws/core.hpp"

namespace vlws {

// RGB raster IO. PNG (lossless) and binary PPM (P6), chosen by extension.
ImageU8 read_image(const std::string& path);
void write_image(const ImageU8& img, const std::string& path);

// Palette-coded mask helpers.
ImageU8 render_mask(const IndexMask& mask, const ClassPalette& palette);
// Exact palette colors map directly; anything else (antialiasing, lossy
// artifacts) falls back to nearest palette color in RGB Euclidean distance,
// ties broken by lower class index.
IndexMask decode_mask(const ImageU8& mask_image, const ClassPalette& palette);

}  // namespace vlws
