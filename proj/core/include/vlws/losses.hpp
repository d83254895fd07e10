#pragma once

#include <vector>

#include "vlws/tensor.hpp"

namespace vlws {

// All loss hyperparameters of the composite objective.
struct LossConfig {
  double lambda_dice = 0.6;
  double lambda_ce = 0.4;
  double lambda_vl = 0.02;
  double tau = 0.07;
  std::vector<double> class_weights;  // empty = uniform 1.0
  double epsilon = 1e-6;

  void validate() const {
    if (lambda_dice < 0 || lambda_ce < 0 || lambda_vl < 0)
      throw std::invalid_argument("loss weights must be nonnegative");
    if (tau <= 0) throw std::invalid_argument("tau must be positive");
    if (epsilon <= 0) throw std::invalid_argument("epsilon must be positive");
    for (double w : class_weights)
      if (w <= 0) throw std::invalid_argument("class weights must be positive");
  }
  std::vector<double> weights_or_uniform(int c) const {
    if (class_weights.empty()) return std::vector<double>(static_cast<size_t>(c), 1.0);
    if (static_cast<int>(class_weights.size()) != c)
      throw std::invalid_argument("class weight count mismatch");
    return class_weights;
  }
};

// p, y: {C,H,W} (single item) or {N,C,H,W} (batch; per-item loss averaged).
// Soft Dice: 1 - (1/C) sum_c 2*sum(p*y) / (sum(p) + sum(y) + eps).
double dice_loss(const Tensor& p, const Tensor& y, double epsilon);

// Weighted categorical cross-entropy, mean over pixels; probabilities are
// clamped to [1e-12, 1] inside the log.
double weighted_ce(const Tensor& p, const Tensor& y, const std::vector<double>& w);

double seg_loss(const Tensor& p, const Tensor& y, const LossConfig& cfg);

// Symmetric InfoNCE over unit-norm rows V, T ({N,D}); throws on rows whose
// norm deviates from 1 by more than 1e-3.
double infonce_symmetric(const Tensor& v_rows, const Tensor& t_rows, double tau);

struct LossBreakdown {
  double dice = 0.0;
  double ce = 0.0;
  double vl = 0.0;
  double total = 0.0;
};

LossBreakdown total_loss(const Tensor& p, const Tensor& y, const Tensor& v_rows,
                         const Tensor& t_rows, const LossConfig& cfg);

// Inverse pixel-frequency class weights over a label histogram, renormalized
// to mean 1. Classes absent from the histogram get weight 1 before
// renormalization.
std::vector<double> inverse_frequency_weights(const std::vector<int64_t>& class_pixel_counts);

}  // namespace vlws
