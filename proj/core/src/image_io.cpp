#include "vlws/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace vlws {

static bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

static ImageU8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("unsupported PPM magic in " + path);
  int w = 0, h = 0, maxv = 0;
  // skip comments
  auto next_int = [&](int& v) {
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string junk;
        std::getline(in, junk);
      } else {
        in >> v;
        return;
      }
    }
  };
  next_int(w);
  next_int(h);
  next_int(maxv);
  if (maxv != 255) throw std::runtime_error("PPM maxval must be 255 in " + path);
  in.get();  // single whitespace after header
  ImageU8 img = ImageU8::blank(h, w);
  in.read(reinterpret_cast<char*>(img.pix.data()), static_cast<std::streamsize>(img.pix.size()));
  if (!in) throw std::runtime_error("truncated PPM: " + path);
  return img;
}

static void write_ppm(const ImageU8& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pix.data()),
            static_cast<std::streamsize>(img.pix.size()));
}

static ImageU8 read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open image: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("png read failure: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  ImageU8 img = ImageU8::blank(h, w);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int r = 0; r < h; ++r) rows[size_t(r)] = img.pix.data() + size_t(r) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

static void write_png(const ImageU8& img, const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot write image: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("png write failure: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int r = 0; r < img.h; ++r)
    rows[size_t(r)] = const_cast<png_bytep>(img.pix.data() + size_t(r) * img.w * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

ImageU8 read_image(const std::string& path) {
  if (has_suffix(path, ".ppm")) return read_ppm(path);
  return read_png(path);
}

void write_image(const ImageU8& img, const std::string& path) {
  if (has_suffix(path, ".ppm")) return write_ppm(img, path);
  return write_png(img, path);
}

ImageU8 render_mask(const IndexMask& mask, const ClassPalette& palette) {
  ImageU8 out = ImageU8::blank(mask.h, mask.w);
  for (int r = 0; r < mask.h; ++r)
    for (int c = 0; c < mask.w; ++c) {
      const Rgb& col = palette.classes.at(mask.at(r, c)).color;
      out.at(r, c, 0) = col.r;
      out.at(r, c, 1) = col.g;
      out.at(r, c, 2) = col.b;
    }
  return out;
}

IndexMask decode_mask(const ImageU8& mask_image, const ClassPalette& palette) {
  IndexMask out = IndexMask::blank(mask_image.h, mask_image.w);
  for (int r = 0; r < mask_image.h; ++r)
    for (int c = 0; c < mask_image.w; ++c) {
      const int pr = mask_image.at(r, c, 0), pg = mask_image.at(r, c, 1), pb = mask_image.at(r, c, 2);
      int best = 0;
      long best_d2 = -1;
      for (const auto& cls : palette.classes) {
        const long dr = pr - cls.color.r, dg = pg - cls.color.g, db = pb - cls.color.b;
        const long d2 = dr * dr + dg * dg + db * db;
        if (best_d2 < 0 || d2 < best_d2) {
          best_d2 = d2;
          best = cls.index;
        }
        if (d2 == 0) break;  // exact match
      }
      out.at(r, c) = static_cast<uint8_t>(best);
    }
  return out;
}

}  // namespace vlws
