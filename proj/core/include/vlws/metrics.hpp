#pragma once

#include <cstdint>
#include <vector>

#include "vlws/core.hpp"

namespace vlws {

// Global per-class overlap counters. Exact integers: accumulation order and
// sharding cannot change the result, and accumulators merge field-wise.
struct DiceAccumulator {
  std::vector<int64_t> intersection;
  std::vector<int64_t> pred;
  std::vector<int64_t> gt;

  explicit DiceAccumulator(int num_classes = 3)
      : intersection(static_cast<size_t>(num_classes), 0),
        pred(static_cast<size_t>(num_classes), 0),
        gt(static_cast<size_t>(num_classes), 0) {}

  int num_classes() const { return static_cast<int>(intersection.size()); }
};

// Value semantics: returns the updated accumulator, input unchanged.
DiceAccumulator accumulate(DiceAccumulator acc, const IndexMask& pred, const IndexMask& gt);
DiceAccumulator merge(DiceAccumulator a, const DiceAccumulator& b);

// 2|P∩G| / (|P|+|G|); 1.0 when the class is absent from both.
double dice_of(const DiceAccumulator& acc, int c);
double mean_dice(const DiceAccumulator& acc);

// IoU = D / (2 - D) and its inverse.
double dice_to_iou(double d);
double iou_to_dice(double i);

}  // namespace vlws
