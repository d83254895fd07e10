#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vlws/autograd.hpp"
#include "vlws/rng.hpp"

namespace vlws {

enum class ParamGroup { visual, text };

// Ordered registry of named trainable (or frozen) parameters. The trainer
// partitions it by group for the two learning rates.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init, ParamGroup group, bool trainable = true) {
    if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    Var v = make_leaf(std::move(init), trainable, name);
    params_.push_back(v);
    groups_.push_back(group);
    by_name_[name] = v;
    return v;
  }

  const std::vector<Var>& all() const { return params_; }
  ParamGroup group_of(size_t i) const { return groups_[i]; }
  Var find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  std::vector<Var> trainable(ParamGroup g) const {
    std::vector<Var> out;
    for (size_t i = 0; i < params_.size(); ++i)
      if (params_[i]->requires_grad && groups_[i] == g) out.push_back(params_[i]);
    return out;
  }
  std::vector<Var> trainable() const {
    std::vector<Var> out;
    for (const auto& p : params_)
      if (p->requires_grad) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<Var> params_;
  std::vector<ParamGroup> groups_;
  std::map<std::string, Var> by_name_;
};

// ---------------------------------------------------------------------------
// Layers. Thin structs: parameters live in the store, forward builds graph.

struct Conv2d {
  Var w, b;
  int stride = 1, pad = 0, dilation = 1;

  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride_, int pad_,
         int dil, Rng& rng, ParamGroup group = ParamGroup::visual, bool trainable = true)
      : stride(stride_), pad(pad_), dilation(dil) {
    Tensor wt({cout, cin, k, k});
    const double std = std::sqrt(2.0 / (double(cin) * k * k));  // He init
    for (int64_t i = 0; i < wt.size(); ++i) wt[i] = rng.normal() * std;
    w = ps.add(name + ".w", std::move(wt), group, trainable);
    b = ps.add(name + ".b", Tensor::zeros({cout}), group, trainable);
  }
  Var operator()(const Var& x) const { return ag::conv2d(x, w, b, stride, pad, dilation); }
};

struct GroupNorm {
  Var gamma, beta;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(ParamStore& ps, const std::string& name, int channels,
            ParamGroup group = ParamGroup::visual, bool trainable = true) {
    groups = ag::norm_groups(channels);
    gamma = ps.add(name + ".g", Tensor::full({channels}, 1.0), group, trainable);
    beta = ps.add(name + ".b", Tensor::zeros({channels}), group, trainable);
  }
  Var operator()(const Var& x) const { return ag::group_norm(x, gamma, beta, groups); }
};

struct Linear {
  Var w, b;

  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int din, int dout, Rng& rng,
         ParamGroup group = ParamGroup::visual, bool trainable = true, double w_scale = -1.0) {
    Tensor wt({dout, din});
    const double std = w_scale >= 0.0 ? w_scale : std::sqrt(2.0 / double(din));
    for (int64_t i = 0; i < wt.size(); ++i) wt[i] = rng.normal() * std;
    w = ps.add(name + ".w", std::move(wt), group, trainable);
    b = ps.add(name + ".b", Tensor::zeros({dout}), group, trainable);
  }
  Var operator()(const Var& x) const { return ag::linear(x, w, b); }
};

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay, per-parameter-group learning rates.

class AdamW {
 public:
  struct Settings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
  };

  explicit AdamW(std::vector<Var> params) : AdamW(std::move(params), Settings{}) {}
  AdamW(std::vector<Var> params, Settings s) : params_(std::move(params)), s_(s) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i] = Tensor::zeros(params_[i]->value.shape());
      v_[i] = Tensor::zeros(params_[i]->value.shape());
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(s_.beta1, t_);
    const double bc2 = 1.0 - std::pow(s_.beta2, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Node& p = *params_[i];
      if (p.grad.empty()) continue;
      for (int64_t j = 0; j < p.value.size(); ++j) {
        const double g = p.grad[j];
        m_[i][j] = s_.beta1 * m_[i][j] + (1.0 - s_.beta1) * g;
        v_[i][j] = s_.beta2 * v_[i][j] + (1.0 - s_.beta2) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        p.value[j] -= lr * (mhat / (std::sqrt(vhat) + s_.eps) + s_.weight_decay * p.value[j]);
      }
    }
  }

 private:
  std::vector<Var> params_;
  Settings s_;
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
};

}  // namespace vlws
