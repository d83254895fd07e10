#include "vlws/losses.hpp"

#include <algorithm>
#include <cmath>

namespace vlws {

static void as_batch(const Tensor& t, int& n, int& c, int64_t& hw) {
  if (t.ndim() == 3) {
    n = 1;
    c = t.dim(0);
    hw = int64_t(t.dim(1)) * t.dim(2);
  } else if (t.ndim() == 4) {
    n = t.dim(0);
    c = t.dim(1);
    hw = int64_t(t.dim(2)) * t.dim(3);
  } else {
    throw std::invalid_argument("loss input must be {C,H,W} or {N,C,H,W}");
  }
}

double dice_loss(const Tensor& p, const Tensor& y, double epsilon) {
  if (!p.same_shape(y)) throw std::invalid_argument("dice_loss: shape mismatch");
  int n, c;
  int64_t hw;
  as_batch(p, n, c, hw);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double item = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double* pp = p.data() + (int64_t(i) * c + ch) * hw;
      const double* yy = y.data() + (int64_t(i) * c + ch) * hw;
      double inter = 0.0, ps = 0.0, ys = 0.0;
      for (int64_t j = 0; j < hw; ++j) {
        inter += pp[j] * yy[j];
        ps += pp[j];
        ys += yy[j];
      }
      item += 2.0 * inter / (ps + ys + epsilon);
    }
    total += 1.0 - item / c;
  }
  return total / n;
}

double weighted_ce(const Tensor& p, const Tensor& y, const std::vector<double>& w) {
  if (!p.same_shape(y)) throw std::invalid_argument("weighted_ce: shape mismatch");
  int n, c;
  int64_t hw;
  as_batch(p, n, c, hw);
  if (static_cast<int>(w.size()) != c)
    throw std::invalid_argument("weighted_ce: weight count mismatch");
  double total = 0.0;
  for (int64_t i = 0; i < p.size(); ++i) {
    if (y[i] == 0.0) continue;
    const int ch = static_cast<int>((i / hw) % c);
    total -= w[static_cast<size_t>(ch)] * std::log(std::clamp(p[i], 1e-12, 1.0));
  }
  return total / double(int64_t(n) * hw);
}

double seg_loss(const Tensor& p, const Tensor& y, const LossConfig& cfg) {
  cfg.validate();
  const int c = p.ndim() == 3 ? p.dim(0) : p.dim(1);
  return cfg.lambda_dice * dice_loss(p, y, cfg.epsilon) +
         cfg.lambda_ce * weighted_ce(p, y, cfg.weights_or_uniform(c));
}

double infonce_symmetric(const Tensor& v_rows, const Tensor& t_rows, double tau) {
  if (v_rows.ndim() != 2 || !v_rows.same_shape(t_rows))
    throw std::invalid_argument("infonce: V and T must be matching N x D matrices");
  if (tau <= 0.0) throw std::invalid_argument("infonce: tau must be positive");
  const int n = v_rows.dim(0), d = v_rows.dim(1);
  for (int i = 0; i < n; ++i)
    for (const Tensor* m : {&v_rows, &t_rows}) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += m->at2(i, j) * m->at2(i, j);
      if (std::abs(std::sqrt(s) - 1.0) > 1e-3)
        throw std::invalid_argument("infonce: unnormalized embedding at row " + std::to_string(i));
    }
  // logits S_ik = <v_i, t_k> / tau, log-sum-exp stabilized
  std::vector<double> s(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += v_rows.at2(i, j) * t_rows.at2(k, j);
      s[size_t(i) * n + k] = dot / tau;
    }
  auto lse_row = [&](int i) {
    double mx = -1e308;
    for (int k = 0; k < n; ++k) mx = std::max(mx, s[size_t(i) * n + k]);
    double acc = 0.0;
    for (int k = 0; k < n; ++k) acc += std::exp(s[size_t(i) * n + k] - mx);
    return mx + std::log(acc);
  };
  auto lse_col = [&](int k) {
    double mx = -1e308;
    for (int i = 0; i < n; ++i) mx = std::max(mx, s[size_t(i) * n + k]);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += std::exp(s[size_t(i) * n + k] - mx);
    return mx + std::log(acc);
  };
  double loss = 0.0;
  for (int i = 0; i < n; ++i)
    loss += (lse_row(i) - s[size_t(i) * n + i]) + (lse_col(i) - s[size_t(i) * n + i]);
  return loss / (2.0 * n);
}

LossBreakdown total_loss(const Tensor& p, const Tensor& y, const Tensor& v_rows,
                         const Tensor& t_rows, const LossConfig& cfg) {
  cfg.validate();
  LossBreakdown out;
  const int c = p.ndim() == 3 ? p.dim(0) : p.dim(1);
  out.dice = dice_loss(p, y, cfg.epsilon);
  out.ce = weighted_ce(p, y, cfg.weights_or_uniform(c));
  out.vl = v_rows.empty() ? 0.0 : infonce_symmetric(v_rows, t_rows, cfg.tau);
  out.total = cfg.lambda_dice * out.dice + cfg.lambda_ce * out.ce + cfg.lambda_vl * out.vl;
  return out;
}

std::vector<double> inverse_frequency_weights(const std::vector<int64_t>& counts) {
  std::vector<double> w(counts.size(), 1.0);
  for (size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > 0) w[c] = 1.0 / double(counts[c]);
  double mean = 0.0;
  for (double x : w) mean += x;
  mean /= double(w.size());
  for (double& x : w) x /= mean;
  return w;
}

}  // namespace vlws
