#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "vlws/experiments.hpp"

using namespace vlws;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.width_multiplier = 0.125;
  cfg.blocks_per_stage = {1, 1, 1, 1};
  return cfg;
}

RunSetup tiny_setup() {
  RunSetup s;
  s.model = tiny_model();
  s.train.lr_visual = 3e-4;
  s.train.lr_text = 3e-5;
  s.train.epochs = 2;
  s.train.patience = 1;
  s.train.batch_size = 4;
  s.train.max_steps = 1;
  return s;
}

Tensor probs3(int h, int w, double p0, double p1, double p2) {
  Tensor t({3, h, w});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      t[int64_t(0) * h * w + r * w + c] = p0;
      t[int64_t(1) * h * w + r * w + c] = p1;
      t[int64_t(2) * h * w + r * w + c] = p2;
    }
  return t;
}

}  // namespace

TEST_CASE("single full-coverage tile stitches to itself") {
  TilePrediction t;
  t.row = 0;
  t.col = 0;
  t.probs = probs3(2, 3, 0.2, 0.5, 0.3);
  t.probs[0] = 0.9;  // pixel (0,0): background wins
  t.probs[6] = 0.05;
  t.probs[12] = 0.05;

  StitchLayout layout{2, 3, BlendMode::mean_prob};
  const StitchResult res = stitch_map({t}, layout);
  REQUIRE(res.prob_map.shape() == std::vector<int>{3, 2, 3});
  for (int64_t i = 0; i < t.probs.size(); ++i) CHECK(res.prob_map[i] == t.probs[i]);
  CHECK(res.class_map.at(0, 0) == 0);
  CHECK(res.class_map.at(1, 2) == 1);
  CHECK(res.area_fractions[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(res.area_fractions[1] == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(res.area_fractions[2] == 0.0);
}

TEST_CASE("overlapping tiles average their probabilities") {
  // scene 1x3; tile A covers cols 0-1, tile B covers cols 1-2
  TilePrediction a, b;
  a.row = a.col = 0;
  a.probs = probs3(1, 2, 0.6, 0.3, 0.1);
  b.row = 0;
  b.col = 1;
  b.probs = probs3(1, 2, 0.2, 0.1, 0.7);

  const StitchResult res = stitch_map({a, b}, StitchLayout{1, 3, BlendMode::mean_prob});
  // col 0: A only; col 2: B only; col 1: mean of both
  CHECK(res.prob_map[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(res.prob_map[1] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(res.prob_map[2] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(res.prob_map[3 + 1] == doctest::Approx(0.2).epsilon(1e-12));   // crop at col 1
  CHECK(res.prob_map[6 + 1] == doctest::Approx(0.4).epsilon(1e-12));   // weed at col 1
  CHECK(res.class_map.at(0, 0) == 0);
  CHECK(res.class_map.at(0, 1) == 0);  // 0.4 vs 0.2 vs 0.4: tie broken to background
  CHECK(res.class_map.at(0, 2) == 2);

  // duplicating the whole tile list changes nothing
  const StitchResult dup = stitch_map({a, a, b, b}, StitchLayout{1, 3, BlendMode::mean_prob});
  for (int64_t i = 0; i < res.prob_map.size(); ++i)
    CHECK(dup.prob_map[i] == doctest::Approx(res.prob_map[i]).epsilon(1e-14));

  // tile list order is irrelevant
  const StitchResult swapped = stitch_map({b, a}, StitchLayout{1, 3, BlendMode::mean_prob});
  for (int64_t i = 0; i < res.prob_map.size(); ++i)
    CHECK(swapped.prob_map[i] == res.prob_map[i]);
}

TEST_CASE("majority blending counts votes and breaks ties low") {
  TilePrediction a, b;
  a.row = a.col = 0;
  a.probs = probs3(1, 1, 0.1, 0.6, 0.3);  // votes crop
  b.row = b.col = 0;
  b.probs = probs3(1, 1, 0.1, 0.2, 0.7);  // votes weed

  const StitchResult res = stitch_map({a, b}, StitchLayout{1, 1, BlendMode::majority});
  CHECK(res.prob_map[0] == 0.0);  // vote fractions
  CHECK(res.prob_map[1] == 0.5);
  CHECK(res.prob_map[2] == 0.5);
  CHECK(res.class_map.at(0, 0) == 1);  // 1-1 tie: lower class index wins

  const StitchResult uni = stitch_map({a, a, b}, StitchLayout{1, 1, BlendMode::majority});
  CHECK(uni.class_map.at(0, 0) == 1);
  CHECK(uni.prob_map[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("stitching validates coverage and geometry") {
  TilePrediction t;
  t.row = t.col = 0;
  t.probs = probs3(1, 2, 0.5, 0.3, 0.2);

  CHECK_THROWS_WITH_AS(stitch_map({t}, StitchLayout{1, 3, BlendMode::mean_prob}),
                       doctest::Contains("coverage gap at (0,2)"), std::runtime_error);

  StitchLayout small{1, 1, BlendMode::mean_prob};
  CHECK_THROWS_WITH_AS(stitch_map({t}, small), doctest::Contains("outside scene"),
                       std::invalid_argument);

  TilePrediction other = t;
  other.probs = Tensor::zeros({2, 1, 2});
  CHECK_THROWS_WITH_AS(stitch_map({t, other}, StitchLayout{1, 2, BlendMode::mean_prob}),
                       doctest::Contains("inconsistent tile prediction shape"),
                       std::invalid_argument);
  CHECK_THROWS_AS(stitch_map({}, StitchLayout{1, 1, BlendMode::mean_prob}),
                  std::invalid_argument);
  CHECK_THROWS_AS(stitch_map({t}, StitchLayout{0, 0, BlendMode::mean_prob}),
                  std::invalid_argument);
}

TEST_CASE("overlay tints vegetation classes only") {
  const auto palette = ClassPalette::canonical();
  ImageU8 img = ImageU8::blank(2, 2);
  for (auto& v : img.pix) v = 100;
  IndexMask m = IndexMask::blank(2, 2);
  m.at(0, 1) = 1;
  m.at(1, 0) = 2;

  const ImageU8 zero = render_overlay(img, m, 0.0, palette);
  for (size_t i = 0; i < img.pix.size(); ++i) CHECK(zero.pix[i] == img.pix[i]);

  const ImageU8 full = render_overlay(img, m, 1.0, palette);
  CHECK(full.at(0, 0, 0) == 100);  // background untouched
  CHECK(full.at(0, 1, 0) == 0);    // crop -> pure green
  CHECK(full.at(0, 1, 1) == 255);
  CHECK(full.at(1, 0, 0) == 255);  // weed -> pure red
  CHECK(full.at(1, 0, 1) == 0);

  const ImageU8 half = render_overlay(img, m, 0.5, palette);
  CHECK(half.at(0, 1, 1) == 178);  // round(0.5*100 + 0.5*255)
  CHECK(half.at(0, 1, 0) == 50);

  CHECK_THROWS_WITH_AS(render_overlay(img, m, 1.5, palette), doctest::Contains("alpha"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(render_overlay(img, IndexMask::blank(3, 3), 0.5, palette),
                       doctest::Contains("extent mismatch"), std::invalid_argument);
}

TEST_CASE("embedding similarity matrix invariants") {
  const Catalog cat = testing::make_inline_catalog({"a", "b"}, 3, 0, 16, 16, 5);
  VLWSModel model(tiny_model(), 1);
  auto enc = make_encoder(EncoderConfig{});

  for (const std::string backend : {"vl", "baseline-visual"}) {
    const SimilarityReport rep = embedding_similarity_matrix(cat, backend, *enc, model, 2, 9);
    CHECK(rep.dataset_ids == std::vector<std::string>{"a", "b"});
    REQUIRE(rep.tile_dataset.size() == 4);  // budget 2 per dataset
    CHECK(rep.per_tile.shape() == std::vector<int>{4, 4});
    CHECK(rep.block_means.shape() == std::vector<int>{2, 2});
    for (int i = 0; i < 4; ++i) {
      CHECK(rep.per_tile[int64_t(i) * 4 + i] == 1.0);
      for (int j = 0; j < 4; ++j) {
        const double v = rep.per_tile[int64_t(i) * 4 + j];
        CHECK(v == rep.per_tile[int64_t(j) * 4 + i]);
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
      }
    }
    // block means are averages of the corresponding per-tile entries
    double ab = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int j = 2; j < 4; ++j) ab += rep.per_tile[int64_t(i) * 4 + j];
    CHECK(rep.block_means[1] == doctest::Approx(ab / 4.0).epsilon(1e-12));
    CHECK(rep.table().find("dataset") != std::string::npos);

    // deterministic in the seed
    const SimilarityReport again = embedding_similarity_matrix(cat, backend, *enc, model, 2, 9);
    for (int64_t i = 0; i < rep.per_tile.size(); ++i)
      CHECK(again.per_tile[i] == rep.per_tile[i]);
  }

  CHECK_THROWS_WITH_AS(embedding_similarity_matrix(cat, "pixel", *enc, model, 2, 9),
                       doctest::Contains("unknown similarity backend"), std::invalid_argument);
  const Catalog solo = testing::make_inline_catalog({"a"}, 2, 0, 16, 16, 5);
  CHECK_THROWS_WITH_AS(embedding_similarity_matrix(solo, "vl", *enc, model, 2, 9),
                       doctest::Contains("at least 2 datasets"), std::invalid_argument);
}

TEST_CASE("adaptation sweep protocol") {
  Catalog cat = testing::make_inline_catalog({"src"}, 4, 0, 16, 16, 41);
  for (int i = 0; i < 6; ++i)
    cat.entries.push_back(testing::make_inline_entry(16, 16, 100 + uint64_t(i), "tgt", "train", i));
  cat.entries.push_back(testing::make_inline_entry(16, 16, 200, "tgt", "val", 0));

  const SweepReport rep = run_adaptation_sweep(cat, "tgt", {0.5, 1.0}, tiny_setup(), 13);
  REQUIRE(rep.cells.size() == 2);
  CHECK(rep.target == "tgt");
  CHECK(rep.cells[0].target_train_keys.size() == 3);
  CHECK(rep.cells[1].target_train_keys.size() == 6);
  // smaller fractions nest inside larger ones
  CHECK(std::includes(rep.cells[1].target_train_keys.begin(),
                      rep.cells[1].target_train_keys.end(),
                      rep.cells[0].target_train_keys.begin(),
                      rep.cells[0].target_train_keys.end()));
  // identical evaluation lists in every cell
  CHECK(rep.cells[0].target_val_keys == rep.cells[1].target_val_keys);
  CHECK(rep.cells[0].target_val_keys.size() == 1);
  for (const auto& cell : rep.cells) {
    const int64_t px = cell.eval.pooled.gt[0] + cell.eval.pooled.gt[1] + cell.eval.pooled.gt[2];
    CHECK(px == 16 * 16);
  }
  const std::string table = rep.table();
  CHECK(table.find("Weed") != std::string::npos);
  CHECK(table.find("50%") != std::string::npos);
  CHECK(table.find("100%") != std::string::npos);

  CHECK_THROWS_WITH_AS(run_adaptation_sweep(cat, "tgt", {1.0, 0.5}, tiny_setup(), 13),
                       doctest::Contains("sorted ascending"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(run_adaptation_sweep(cat, "tgt", {0.5, 1.5}, tiny_setup(), 13),
                       doctest::Contains("(0,1]"), std::invalid_argument);
  CHECK_THROWS_AS(run_adaptation_sweep(cat, "tgt", {}, tiny_setup(), 13),
                  std::invalid_argument);
  CHECK_THROWS_WITH_AS(run_adaptation_sweep(cat, "src", {0.5}, tiny_setup(), 13),
                       doctest::Contains("no validation split"), std::runtime_error);
}

TEST_CASE("language-loss ablation zeroes the contrastive term at lambda 0") {
  const Catalog cat = testing::make_inline_catalog({"a"}, 2, 1, 16, 16, 51);
  const AblationReport rep = run_lambda_ablation(cat, {0.0, 0.02}, tiny_setup());
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.rows[0].lambda_vl == 0.0);
  CHECK(rep.rows[1].lambda_vl == 0.02);

  REQUIRE_FALSE(rep.rows[0].history.empty());
  for (const auto& line : rep.rows[0].history) {
    std::istringstream ss(line);
    int step, epoch;
    double dice, ce, vl, total;
    REQUIRE((ss >> step >> epoch >> dice >> ce >> vl >> total));
    CHECK(vl == 0.0);
    // history values are logged with 6 significant digits
    CHECK(total == doctest::Approx(0.6 * dice + 0.4 * ce).epsilon(1e-4));
  }
  bool nonzero_vl = false;
  for (const auto& line : rep.rows[1].history) {
    std::istringstream ss(line);
    int step, epoch;
    double dice, ce, vl;
    ss >> step >> epoch >> dice >> ce >> vl;
    if (vl != 0.0) nonzero_vl = true;
  }
  CHECK(nonzero_vl);

  const std::string table = rep.table();
  CHECK(table.find("lambda_vl") != std::string::npos);

  CHECK_THROWS_AS(run_lambda_ablation(cat, {}, tiny_setup()), std::invalid_argument);
  CHECK_THROWS_AS(run_lambda_ablation(cat, {-0.1}, tiny_setup()), std::invalid_argument);
}
