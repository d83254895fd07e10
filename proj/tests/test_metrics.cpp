#include <array>

#include "doctest.h"
#include "vlws/metrics.hpp"
#include "vlws/rng.hpp"

using namespace vlws;

namespace {

IndexMask random_mask(Rng& rng, int h, int w, int c) {
  IndexMask m = IndexMask::blank(h, w);
  for (auto& v : m.idx) v = static_cast<uint8_t>(rng.below(static_cast<uint64_t>(c)));
  return m;
}

// Naive per-pixel set computation, independent of the accumulator.
double brute_force_dice(const std::vector<std::pair<IndexMask, IndexMask>>& pairs, int c) {
  int64_t inter = 0, pred = 0, gt = 0;
  for (const auto& [p, g] : pairs)
    for (size_t j = 0; j < p.idx.size(); ++j) {
      if (p.idx[j] == c && g.idx[j] == c) ++inter;
      if (p.idx[j] == c) ++pred;
      if (g.idx[j] == c) ++gt;
    }
  if (pred + gt == 0) return 1.0;
  return 2.0 * double(inter) / double(pred + gt);
}

}  // namespace

TEST_CASE("accumulate counts overlap sets") {
  IndexMask crop = IndexMask::blank(4, 4);
  for (auto& v : crop.idx) v = 1;
  auto acc = accumulate(DiceAccumulator(3), crop, crop);
  CHECK(acc.intersection[1] == 16);
  CHECK(acc.pred[1] == 16);
  CHECK(acc.gt[1] == 16);
  CHECK(dice_of(acc, 1) == 1.0);

  IndexMask weed = IndexMask::blank(4, 4);
  for (auto& v : weed.idx) v = 2;
  const auto disjoint = accumulate(DiceAccumulator(3), crop, weed);
  for (int c = 0; c < 3; ++c) CHECK(disjoint.intersection[size_t(c)] == 0);
}

TEST_CASE("dice_of handles half overlap and absent classes") {
  DiceAccumulator acc(3);
  acc.pred[1] = 10;
  acc.gt[1] = 10;
  acc.intersection[1] = 5;
  CHECK(dice_of(acc, 1) == doctest::Approx(0.5));
  CHECK(dice_of(acc, 2) == 1.0);  // absent from both
}

TEST_CASE("global dice matches brute force on 200 random pairs") {
  Rng rng(42);
  DiceAccumulator acc(3);
  std::vector<std::pair<IndexMask, IndexMask>> pairs;
  for (int i = 0; i < 200; ++i) {
    auto p = random_mask(rng, 8, 8, 3);
    auto g = random_mask(rng, 8, 8, 3);
    acc = accumulate(std::move(acc), p, g);
    pairs.emplace_back(std::move(p), std::move(g));
    for (int c = 0; c < 3; ++c) CHECK(dice_of(acc, c) == brute_force_dice(pairs, c));
  }
}

TEST_CASE("merge is field-wise addition and order-independent") {
  Rng rng(5);
  std::vector<DiceAccumulator> shards;
  for (int i = 0; i < 6; ++i)
    shards.push_back(accumulate(DiceAccumulator(3), random_mask(rng, 8, 8, 3),
                                random_mask(rng, 8, 8, 3)));
  DiceAccumulator fwd(3), rev(3);
  for (const auto& s : shards) fwd = merge(std::move(fwd), s);
  for (auto it = shards.rbegin(); it != shards.rend(); ++it) rev = merge(std::move(rev), *it);
  CHECK(fwd.intersection == rev.intersection);
  CHECK(fwd.pred == rev.pred);
  CHECK(fwd.gt == rev.gt);

  // merge(accumulate(a,x1), accumulate(zero,x2)) == accumulate(accumulate(a,x1),x2)
  auto x1p = random_mask(rng, 8, 8, 3), x1g = random_mask(rng, 8, 8, 3);
  auto x2p = random_mask(rng, 8, 8, 3), x2g = random_mask(rng, 8, 8, 3);
  const auto a = accumulate(DiceAccumulator(3), random_mask(rng, 8, 8, 3),
                            random_mask(rng, 8, 8, 3));
  const auto lhs = merge(accumulate(a, x1p, x1g), accumulate(DiceAccumulator(3), x2p, x2g));
  const auto rhs = accumulate(accumulate(a, x1p, x1g), x2p, x2g);
  CHECK(lhs.intersection == rhs.intersection);
  CHECK(lhs.pred == rhs.pred);
  CHECK(lhs.gt == rhs.gt);
}

TEST_CASE("accumulate has value semantics and validates shapes") {
  Rng rng(9);
  const auto base = accumulate(DiceAccumulator(3), random_mask(rng, 4, 4, 3),
                               random_mask(rng, 4, 4, 3));
  const auto before = base.intersection;
  (void)accumulate(base, random_mask(rng, 4, 4, 3), random_mask(rng, 4, 4, 3));
  CHECK(base.intersection == before);
  CHECK_THROWS(accumulate(DiceAccumulator(3), IndexMask::blank(4, 4), IndexMask::blank(4, 8)));
}

TEST_CASE("class-mean dice") {
  DiceAccumulator acc(3);
  CHECK(mean_dice(acc) == 1.0);  // all classes absent

  // per-class (0.8045, 0.9523, 0.9924) -> 0.9164
  const double avg = (0.8045 + 0.9523 + 0.9924) / 3.0;
  CHECK(std::abs(avg - 0.9164) < 0.005);
  CHECK((1.0 + 0.0 + 1.0) / 3.0 == doctest::Approx(0.6667).epsilon(1e-3));
}

TEST_CASE("dice/iou conversion") {
  CHECK(dice_to_iou(1.0) == 1.0);
  CHECK(dice_to_iou(0.0) == 0.0);
  CHECK(std::abs(dice_to_iou(0.7757) - 0.6335) < 0.0005);
  CHECK(std::abs(dice_to_iou(0.7566) - 0.6085) < 0.0005);
  CHECK_THROWS(dice_to_iou(1.5));
  CHECK_THROWS(iou_to_dice(-0.1));

  // strictly increasing, and the inverse round-trips
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double d = i / 100.0;
    const double iou = dice_to_iou(d);
    CHECK(iou > prev);
    prev = iou;
    CHECK(std::abs(iou_to_dice(iou) - d) < 1e-12);
  }
}
