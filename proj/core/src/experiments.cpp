#include "vlws/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "vlws/rng.hpp"

namespace vlws {

static std::vector<std::string> sorted_keys(const std::vector<CatalogEntry>& entries) {
  std::vector<std::string> keys;
  for (const auto& e : entries) keys.push_back(e.key());
  std::sort(keys.begin(), keys.end());
  return keys;
}

std::string SweepReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(12) << "class";
  for (const auto& c : cells) {
    std::ostringstream col;
    col << std::setprecision(3) << c.fraction * 100.0 << '%';
    os << std::right << std::setw(10) << col.str();
  }
  os << '\n' << std::fixed << std::setprecision(4);
  const std::vector<std::pair<std::string, int>> rows = {
      {"Weed", 2}, {"Crop", 1}, {"Background", 0}};
  for (const auto& [label, cls] : rows) {
    os << std::left << std::setw(12) << label;
    for (const auto& c : cells) os << std::right << std::setw(10) << dice_of(c.eval.pooled, cls);
    os << '\n';
  }
  os << std::left << std::setw(12) << "Mean";
  for (const auto& c : cells) os << std::right << std::setw(10) << mean_dice(c.eval.pooled);
  os << '\n';
  return os.str();
}

SweepReport run_adaptation_sweep(const Catalog& catalog, const std::string& target,
                                 const std::vector<double>& fractions, const RunSetup& setup,
                                 uint64_t seed, std::ostream* log) {
  if (fractions.empty()) throw std::invalid_argument("sweep: no fractions");
  for (size_t i = 0; i < fractions.size(); ++i) {
    if (fractions[i] <= 0.0 || fractions[i] > 1.0)
      throw std::invalid_argument("sweep: fractions must be in (0,1]");
    if (i > 0 && fractions[i] <= fractions[i - 1])
      throw std::invalid_argument("sweep: fractions must be sorted ascending");
  }
  const auto val_set = catalog.split_of(target, "val");
  if (val_set.empty())
    throw std::runtime_error("sweep: target has no validation split: " + target);

  SweepReport report;
  report.target = target;
  for (double f : fractions) {
    const Catalog sub = subsample_target(catalog, target, f, seed);
    SweepCell cell;
    cell.fraction = f;
    cell.target_train_keys = sorted_keys(sub.split_of(target, "train"));
    cell.target_val_keys = sorted_keys(val_set);

    VLWSModel model(setup.model, setup.train.seed);
    auto encoder = make_encoder(setup.encoder);
    if (log) *log << "sweep " << target << " fraction " << f << '\n';
    const TrainResult tr =
        train(model, *encoder, sub.split("train"), val_set, setup.train, setup.loss, log);
    cell.eval = tr.best_epoch >= 0 && !tr.final_eval.per_dataset.empty()
                    ? tr.final_eval
                    : evaluate(model, *encoder, val_set, setup.train);
    report.cells.push_back(std::move(cell));
  }
  return report;
}

std::string AblationReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(12) << "lambda_vl" << std::right << std::setw(10) << "Weed"
     << std::setw(10) << "Crop" << std::setw(10) << "Bg" << std::setw(10) << "Avg" << '\n'
     << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(12) << std::setprecision(3) << r.lambda_vl << std::right
       << std::setprecision(4);
    for (int c = r.eval.pooled.num_classes() - 1; c >= 0; --c)
      os << std::setw(10) << dice_of(r.eval.pooled, c);
    os << std::setw(10) << mean_dice(r.eval.pooled) << '\n';
  }
  return os.str();
}

AblationReport run_lambda_ablation(const Catalog& catalog, const std::vector<double>& values,
                                   const RunSetup& setup, std::ostream* log) {
  if (values.empty()) throw std::invalid_argument("ablation: no lambda values");
  for (double v : values)
    if (v < 0.0) throw std::invalid_argument("ablation: lambda values must be nonnegative");
  const auto train_set = catalog.split("train");
  const auto val_set = catalog.split("val");

  AblationReport report;
  for (double v : values) {
    RunSetup cell = setup;
    cell.loss.lambda_vl = v;
    VLWSModel model(cell.model, cell.train.seed);
    auto encoder = make_encoder(cell.encoder);
    if (log) *log << "ablation lambda_vl " << v << '\n';
    const TrainResult tr =
        train(model, *encoder, train_set, val_set, cell.train, cell.loss, log);
    AblationRow row;
    row.lambda_vl = v;
    row.history = tr.history;
    row.eval = tr.best_epoch >= 0 && !tr.final_eval.per_dataset.empty()
                   ? tr.final_eval
                   : evaluate(model, *encoder, val_set, cell.train);
    report.rows.push_back(std::move(row));
  }
  return report;
}

StitchResult stitch_map(const std::vector<TilePrediction>& tiles, const StitchLayout& layout) {
  if (layout.h < 1 || layout.w < 1) throw std::invalid_argument("stitch: empty scene");
  if (tiles.empty()) throw std::invalid_argument("stitch: no tiles");
  const int c = tiles[0].probs.dim(0);
  const int64_t hw = int64_t(layout.h) * layout.w;

  std::vector<double> sum(static_cast<size_t>(c) * hw, 0.0);
  std::vector<int32_t> count(static_cast<size_t>(hw), 0);

  for (const auto& t : tiles) {
    if (t.probs.ndim() != 3 || t.probs.dim(0) != c)
      throw std::invalid_argument("stitch: inconsistent tile prediction shape");
    const int th = t.probs.dim(1), tw = t.probs.dim(2);
    if (t.row < 0 || t.col < 0 || t.row + th > layout.h || t.col + tw > layout.w)
      throw std::invalid_argument("stitch: tile outside scene");
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x) {
        const int64_t px = int64_t(t.row + y) * layout.w + (t.col + x);
        ++count[size_t(px)];
        if (layout.blend == BlendMode::mean_prob) {
          for (int k = 0; k < c; ++k)
            sum[size_t(k) * size_t(hw) + size_t(px)] +=
                t.probs[int64_t(k) * th * tw + int64_t(y) * tw + x];
        } else {
          int best = 0;
          double bv = t.probs[int64_t(y) * tw + x];
          for (int k = 1; k < c; ++k) {
            const double v = t.probs[int64_t(k) * th * tw + int64_t(y) * tw + x];
            if (v > bv) {
              bv = v;
              best = k;
            }
          }
          sum[size_t(best) * size_t(hw) + size_t(px)] += 1.0;
        }
      }
  }

  StitchResult res;
  res.class_map = IndexMask::blank(layout.h, layout.w);
  res.prob_map = Tensor::zeros({c, layout.h, layout.w});
  std::vector<int64_t> areas(static_cast<size_t>(c), 0);
  for (int r = 0; r < layout.h; ++r)
    for (int x = 0; x < layout.w; ++x) {
      const int64_t px = int64_t(r) * layout.w + x;
      if (count[size_t(px)] == 0)
        throw std::runtime_error("coverage gap at (" + std::to_string(r) + "," +
                                 std::to_string(x) + ")");
      int best = 0;
      double bv = -1.0;
      for (int k = 0; k < c; ++k) {
        const double v = sum[size_t(k) * size_t(hw) + size_t(px)] / count[size_t(px)];
        res.prob_map[int64_t(k) * hw + px] = v;
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      res.class_map.at(r, x) = static_cast<uint8_t>(best);
      ++areas[size_t(best)];
    }
  for (int k = 0; k < c; ++k)
    res.area_fractions.push_back(double(areas[size_t(k)]) / double(hw));
  return res;
}

static std::vector<double> unit_rows(const Tensor& row) {
  std::vector<double> v(row.data(), row.data() + row.size());
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n < 1e-12) throw std::runtime_error("degenerate embedding");
  for (double& x : v) x /= n;
  return v;
}

std::string SimilarityReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(16) << "dataset";
  for (const auto& id : dataset_ids) os << std::right << std::setw(14) << id;
  os << '\n' << std::fixed << std::setprecision(4);
  const int k = static_cast<int>(dataset_ids.size());
  for (int a = 0; a < k; ++a) {
    os << std::left << std::setw(16) << dataset_ids[size_t(a)];
    for (int b = 0; b < k; ++b)
      os << std::right << std::setw(14) << block_means[int64_t(a) * k + b];
    os << '\n';
  }
  return os.str();
}

SimilarityReport embedding_similarity_matrix(const Catalog& catalog, const std::string& backend,
                                             VLEncoder& encoder, VLWSModel& model, int budget,
                                             uint64_t seed) {
  if (backend != "vl" && backend != "baseline-visual")
    throw std::invalid_argument("unknown similarity backend: " + backend);
  SimilarityReport rep;
  rep.dataset_ids = catalog.dataset_ids();
  if (rep.dataset_ids.size() < 2)
    throw std::invalid_argument("similarity analysis needs at least 2 datasets");
  const auto palette = ClassPalette::canonical();

  std::vector<std::vector<double>> embeds;
  for (size_t d = 0; d < rep.dataset_ids.size(); ++d) {
    const auto& id = rep.dataset_ids[d];
    std::vector<CatalogEntry> pool;
    for (const auto& e : catalog.entries)
      if (e.dataset_id == id) pool.push_back(e);
    std::sort(pool.begin(), pool.end(),
              [](const CatalogEntry& a, const CatalogEntry& b) { return a.key() < b.key(); });
    Rng rng(mix64(seed, fnv1a64(id.data(), id.size())));
    std::vector<size_t> order(pool.size());
    std::iota(order.begin(), order.end(), size_t{0});
    rng.shuffle(order);
    const size_t take = std::min(pool.size(), static_cast<size_t>(budget));
    for (size_t i = 0; i < take; ++i) {
      const SampleRecord s = load_sample(pool[order[i]], palette);
      Tensor e;
      if (backend == "vl") {
        e = encoder.encode_image_global(s.image)->value;
      } else {
        const Var x = make_const(VLWSModel::images_to_tensor({&s.image}));
        const auto [low, deep] = model.extract_features(x);
        e = ag::global_avg_pool(deep)->value;
      }
      embeds.push_back(unit_rows(e));
      rep.tile_dataset.push_back(static_cast<int>(d));
    }
  }

  const int m = static_cast<int>(embeds.size());
  rep.per_tile = Tensor::zeros({m, m});
  for (int i = 0; i < m; ++i) {
    rep.per_tile[int64_t(i) * m + i] = 1.0;
    for (int j = i + 1; j < m; ++j) {
      double dot = 0.0;
      for (size_t k = 0; k < embeds[size_t(i)].size(); ++k)
        dot += embeds[size_t(i)][k] * embeds[size_t(j)][k];
      dot = std::clamp(dot, -1.0, 1.0);
      rep.per_tile[int64_t(i) * m + j] = dot;
      rep.per_tile[int64_t(j) * m + i] = dot;
    }
  }

  const int k = static_cast<int>(rep.dataset_ids.size());
  rep.block_means = Tensor::zeros({k, k});
  Tensor counts = Tensor::zeros({k, k});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const int a = rep.tile_dataset[size_t(i)], b = rep.tile_dataset[size_t(j)];
      rep.block_means[int64_t(a) * k + b] += rep.per_tile[int64_t(i) * m + j];
      counts[int64_t(a) * k + b] += 1.0;
    }
  for (int64_t i = 0; i < rep.block_means.size(); ++i)
    if (counts[i] > 0) rep.block_means[i] /= counts[i];
  return rep;
}

ImageU8 render_overlay(const ImageU8& image, const IndexMask& class_map, double alpha,
                       const ClassPalette& palette) {
  if (image.h != class_map.h || image.w != class_map.w)
    throw std::invalid_argument("overlay: image/map extent mismatch");
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("overlay: alpha must be in [0,1]");
  ImageU8 out = image;
  for (int r = 0; r < image.h; ++r)
    for (int c = 0; c < image.w; ++c) {
      const int cls = class_map.at(r, c);
      if (cls == 0) continue;  // background stays the raw image
      if (cls >= palette.num_classes()) throw std::invalid_argument("overlay: class out of range");
      const Rgb tint = palette.classes[size_t(cls)].color;
      const uint8_t tc[3] = {tint.r, tint.g, tint.b};
      for (int ch = 0; ch < 3; ++ch)
        out.at(r, c, ch) = static_cast<uint8_t>(
            std::lround((1.0 - alpha) * image.at(r, c, ch) + alpha * tc[ch]));
    }
  return out;
}

}  // namespace vlws
