#include "vlws/metrics.hpp"

#include <stdexcept>

namespace vlws {

DiceAccumulator accumulate(DiceAccumulator acc, const IndexMask& pred, const IndexMask& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw std::invalid_argument("accumulate: prediction/label shape mismatch");
  const int c = acc.num_classes();
  for (size_t j = 0; j < pred.idx.size(); ++j) {
    const int p = pred.idx[j], g = gt.idx[j];
    if (p >= c || g >= c) throw std::out_of_range("accumulate: class index out of range");
    acc.pred[static_cast<size_t>(p)] += 1;
    acc.gt[static_cast<size_t>(g)] += 1;
    if (p == g) acc.intersection[static_cast<size_t>(p)] += 1;
  }
  return acc;
}

DiceAccumulator merge(DiceAccumulator a, const DiceAccumulator& b) {
  if (a.num_classes() != b.num_classes())
    throw std::invalid_argument("merge: class count mismatch");
  for (size_t c = 0; c < a.intersection.size(); ++c) {
    a.intersection[c] += b.intersection[c];
    a.pred[c] += b.pred[c];
    a.gt[c] += b.gt[c];
  }
  return a;
}

double dice_of(const DiceAccumulator& acc, int c) {
  const auto i = static_cast<size_t>(c);
  const int64_t denom = acc.pred[i] + acc.gt[i];
  if (denom == 0) return 1.0;  // absence correctly predicted
  return 2.0 * double(acc.intersection[i]) / double(denom);
}

double mean_dice(const DiceAccumulator& acc) {
  double s = 0.0;
  for (int c = 0; c < acc.num_classes(); ++c) s += dice_of(acc, c);
  return s / acc.num_classes();
}

double dice_to_iou(double d) {
  if (d < 0.0 || d > 1.0) throw std::invalid_argument("dice_to_iou: value outside [0,1]");
  return d / (2.0 - d);
}

double iou_to_dice(double i) {
  if (i < 0.0 || i > 1.0) throw std::invalid_argument("iou_to_dice: value outside [0,1]");
  return 2.0 * i / (1.0 + i);
}

}  // namespace vlws
