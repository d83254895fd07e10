#include "vlws/core.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace vlws {

void ClassPalette::validate() const {
  if (classes.size() != 3)
    throw std::invalid_argument("palette: expected exactly 3 classes");
  const std::array<std::string, 3> want = {"background", "crop", "weed"};
  for (int i = 0; i < 3; ++i) {
    if (classes[size_t(i)].index != i)
      throw std::invalid_argument("palette: indices must be 0..C-1 in order");
    if (classes[size_t(i)].name != want[size_t(i)])
      throw std::invalid_argument("palette: canonical order is background, crop, weed");
  }
  for (size_t a = 0; a < classes.size(); ++a)
    for (size_t b = a + 1; b < classes.size(); ++b)
      if (classes[a].color == classes[b].color)
        throw std::invalid_argument("palette: colors must be pairwise distinct");
}

ValidationReport validate_sample(const SampleRecord& s, const ClassPalette& palette) {
  ValidationReport rep;
  if (s.image.h != s.mask.h || s.image.w != s.mask.w) {
    rep.violations.push_back({"shape mismatch",
                              "image " + std::to_string(s.image.h) + "x" + std::to_string(s.image.w) +
                                  " vs mask " + std::to_string(s.mask.h) + "x" +
                                  std::to_string(s.mask.w)});
    return rep;  // pixel checks are meaningless past this point
  }
  const int c = palette.num_classes();
  for (int r = 0; r < s.mask.h; ++r)
    for (int col = 0; col < s.mask.w; ++col)
      if (s.mask.at(r, col) >= c) {
        rep.violations.push_back({"invalid class index",
                                  "at (" + std::to_string(r) + "," + std::to_string(col) + "): " +
                                      std::to_string(int(s.mask.at(r, col)))});
        return rep;
      }
  if (s.caption.empty()) rep.violations.push_back({"empty caption", "caption"});
  return rep;
}

void ProbabilityMap::validate(double tol) const {
  if (p.ndim() != 3) throw std::invalid_argument("probability map must be C x H x W");
  const int c = p.dim(0);
  const int64_t hw = int64_t(p.dim(1)) * p.dim(2);
  for (int64_t j = 0; j < hw; ++j) {
    double s = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double v = p[int64_t(ch) * hw + j];
      if (v < 0.0 || v > 1.0) throw std::invalid_argument("probability out of [0,1]");
      s += v;
    }
    if (std::abs(s - 1.0) > tol) throw std::invalid_argument("per-pixel channel sum != 1");
  }
}

OneHotMask mask_to_onehot(const IndexMask& mask, int num_classes) {
  Tensor y({num_classes, mask.h, mask.w});
  const int64_t hw = int64_t(mask.h) * mask.w;
  for (int64_t j = 0; j < hw; ++j) {
    const int cls = mask.idx[size_t(j)];
    if (cls >= num_classes)
      throw std::out_of_range("mask_to_onehot: class out of range: " + std::to_string(cls));
    y[int64_t(cls) * hw + j] = 1.0;
  }
  return OneHotMask{std::move(y)};
}

IndexMask onehot_argmax(const OneHotMask& y) {
  const int c = y.y.dim(0), h = y.y.dim(1), w = y.y.dim(2);
  IndexMask m = IndexMask::blank(h, w);
  const int64_t hw = int64_t(h) * w;
  for (int64_t j = 0; j < hw; ++j) {
    int best = 0;
    double bv = y.y[j];
    for (int ch = 1; ch < c; ++ch)
      if (y.y[int64_t(ch) * hw + j] > bv) {
        bv = y.y[int64_t(ch) * hw + j];
        best = ch;
      }
    m.idx[size_t(j)] = static_cast<uint8_t>(best);
  }
  return m;
}

static std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

DatasetManifest parse_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  DatasetManifest m;
  std::string line;
  std::set<std::string> seen_images;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("dataset_id=", 0) == 0) {
      m.dataset_id = line.substr(11);
    } else if (line.rfind("split=", 0) == 0) {
      m.split = line.substr(6);
      if (m.split != "train" && m.split != "val")
        throw std::runtime_error("manifest: split must be train or val: " + m.split);
    } else if (line.rfind("gsd=", 0) == 0) {
      m.gsd_mm_per_px = std::stod(line.substr(4));
    } else if (line.rfind("image=", 0) == 0) {
      ManifestEntry e;
      std::stringstream ss(line);
      std::string field;
      while (std::getline(ss, field, '\t')) {
        if (field.rfind("image=", 0) == 0) e.image_path = field.substr(6);
        else if (field.rfind("mask=", 0) == 0) e.mask_path = field.substr(5);
        else if (field.rfind("caption=", 0) == 0) e.caption_ref = field.substr(8);
      }
      if (e.image_path.empty())
        throw std::runtime_error("manifest: record without image path");
      if (!seen_images.insert(e.image_path).second)
        throw std::runtime_error("manifest: duplicate image entry: " + e.image_path);
      m.entries.push_back(std::move(e));
    } else {
      throw std::runtime_error("manifest: unrecognized line: " + line);
    }
  }
  if (m.dataset_id.empty()) throw std::runtime_error("manifest: missing dataset_id: " + path);
  if (m.split.empty()) throw std::runtime_error("manifest: missing split: " + path);
  if (m.entries.empty()) throw std::runtime_error("manifest: no entries: " + path);
  // Referenced files must exist at load time; inline captions are exempt.
  namespace fs = std::filesystem;
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  for (auto& e : m.entries) {
    if (!fs::exists(resolve(e.image_path)))
      throw std::runtime_error("manifest: missing image file: " + e.image_path);
    if (!e.mask_path.empty() && !fs::exists(resolve(e.mask_path)))
      throw std::runtime_error("manifest: missing mask file: " + e.mask_path);
    if (!e.caption_ref.empty() && e.caption_ref.rfind("inline:", 0) != 0 &&
        !fs::exists(resolve(e.caption_ref)))
      throw std::runtime_error("manifest: missing caption file: " + e.caption_ref);
    // store resolved absolute paths so the catalog is location-independent
    e.image_path = resolve(e.image_path).string();
    if (!e.mask_path.empty()) e.mask_path = resolve(e.mask_path).string();
    if (!e.caption_ref.empty() && e.caption_ref.rfind("inline:", 0) != 0)
      e.caption_ref = resolve(e.caption_ref).string();
  }
  return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << "dataset_id=" << m.dataset_id << "\n";
  out << "split=" << m.split << "\n";
  out << "gsd=" << m.gsd_mm_per_px << "\n";
  for (const auto& e : m.entries) {
    out << "image=" << e.image_path << "\tmask=" << e.mask_path;
    if (!e.caption_ref.empty()) out << "\tcaption=" << e.caption_ref;
    out << "\n";
  }
}

}  // namespace vlws
