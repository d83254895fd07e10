#include <filesystem>

#include "doctest.h"
#include "vlws/image_io.hpp"
#include "vlws/rng.hpp"

using namespace vlws;
namespace fs = std::filesystem;

namespace {

ImageU8 random_image(Rng& rng, int h, int w) {
  ImageU8 img = ImageU8::blank(h, w);
  for (auto& v : img.pix) v = static_cast<uint8_t>(rng.below(256));
  return img;
}

}  // namespace

TEST_CASE("png and ppm round-trips are lossless") {
  const fs::path dir = fs::temp_directory_path() / "vlws_io_test";
  fs::create_directories(dir);
  Rng rng(21);
  const ImageU8 img = random_image(rng, 23, 37);
  for (const char* name : {"img.png", "img.ppm"}) {
    const std::string path = (dir / name).string();
    write_image(img, path);
    const ImageU8 back = read_image(path);
    CHECK(back.h == img.h);
    CHECK(back.w == img.w);
    CHECK(back.pix == img.pix);
  }
  CHECK_THROWS(read_image((dir / "does_not_exist.png").string()));
  fs::remove_all(dir);
}

TEST_CASE("mask render/decode identity") {
  const auto palette = ClassPalette::canonical();
  Rng rng(22);
  IndexMask m = IndexMask::blank(19, 13);
  for (auto& v : m.idx) v = static_cast<uint8_t>(rng.below(3));
  const IndexMask back = decode_mask(render_mask(m, palette), palette);
  CHECK(back.idx == m.idx);
}

TEST_CASE("decode_mask exact palette lookups") {
  const auto palette = ClassPalette::canonical();
  ImageU8 img = ImageU8::blank(1, 3);
  img.at(0, 1, 1) = 255;  // (0,255,0)
  img.at(0, 2, 0) = 255;  // (255,0,0)
  const IndexMask m = decode_mask(img, palette);
  CHECK(m.at(0, 0) == 0);
  CHECK(m.at(0, 1) == 1);
  CHECK(m.at(0, 2) == 2);
}

TEST_CASE("decode_mask nearest-color fallback") {
  const auto palette = ClassPalette::canonical();
  ImageU8 img = ImageU8::blank(1, 2);
  // antialiased green
  img.at(0, 0, 0) = 10;
  img.at(0, 0, 1) = 245;
  img.at(0, 0, 2) = 10;
  // equidistant between crop and weed: tie resolves to the lower index
  img.at(0, 1, 0) = 128;
  img.at(0, 1, 1) = 128;
  img.at(0, 1, 2) = 0;
  const IndexMask m = decode_mask(img, palette);
  CHECK(m.at(0, 0) == 1);
  CHECK(m.at(0, 1) == 1);
}
