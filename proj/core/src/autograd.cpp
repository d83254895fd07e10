#include "vlws/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace vlws {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

Var make_leaf(Tensor value, bool requires_grad, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return n;
}

Var make_const(Tensor value) { return make_leaf(std::move(value), false); }

static Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  n->parents = std::move(parents);
  n->requires_grad = rg;
  if (rg) n->backward_op = std::move(bw);
  return n;
}

void backward(const Var& root) {
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backward_op && !n->grad.empty()) n->backward_op(*n);
  }
}

namespace ag {

int norm_groups(int channels, int cap) {
  for (int g = std::min(cap, channels); g >= 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("add: shape mismatch " + a->value.shape_str() + " vs " +
                                b->value.shape_str());
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    for (Var p : {a, b}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (int64_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
  return make_op(std::move(out), {a}, [a, s](Node& n) {
    a->ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) a->grad[i] += s * n.grad[i];
  });
}

Var add_scaled(const std::vector<Var>& terms, const std::vector<double>& coeffs) {
  if (terms.empty() || terms.size() != coeffs.size())
    throw std::invalid_argument("add_scaled: bad arity");
  Tensor out = Tensor::zeros(terms[0]->value.shape());
  for (size_t k = 0; k < terms.size(); ++k) {
    if (!terms[k]->value.same_shape(out)) throw std::invalid_argument("add_scaled: shape mismatch");
    for (int64_t i = 0; i < out.size(); ++i) out[i] += coeffs[k] * terms[k]->value[i];
  }
  std::vector<Var> parents = terms;
  return make_op(std::move(out), parents, [terms, coeffs](Node& n) {
    for (size_t k = 0; k < terms.size(); ++k) {
      if (!terms[k]->requires_grad) continue;
      terms[k]->ensure_grad();
      for (int64_t i = 0; i < n.grad.size(); ++i) terms[k]->grad[i] += coeffs[k] * n.grad[i];
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return make_op(std::move(out), {x}, [x](Node& n) {
    x->ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i)
      if (x->value[i] > 0.0) x->grad[i] += n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Convolution via im2col + GEMM.

static void im2col(const double* x, int ci, int h, int w, int kh, int kw, int stride, int pad,
                   int dil, int ho, int wo, double* col) {
  const int64_t l = int64_t(ho) * wo;
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* row = col + ((int64_t(c) * kh + ky) * kw + kx) * l;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky * dil;
          if (iy < 0 || iy >= h) {
            std::fill(row + int64_t(oy) * wo, row + int64_t(oy + 1) * wo, 0.0);
            continue;
          }
          const double* src = x + (int64_t(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx * dil;
            row[int64_t(oy) * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

static void col2im_add(const double* col, int ci, int h, int w, int kh, int kw, int stride, int pad,
                       int dil, int ho, int wo, double* x) {
  const int64_t l = int64_t(ho) * wo;
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const double* row = col + ((int64_t(c) * kh + ky) * kw + kx) * l;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky * dil;
          if (iy < 0 || iy >= h) continue;
          double* dst = x + (int64_t(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx * dil;
            if (ix >= 0 && ix < w) dst[ix] += row[int64_t(oy) * wo + ox];
          }
        }
      }
    }
  }
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int dilation) {
  const Tensor& xt = x->value;
  const Tensor& wt = w->value;
  if (xt.ndim() != 4 || wt.ndim() != 4 || xt.dim(1) != wt.dim(1))
    throw std::invalid_argument("conv2d: shape mismatch " + xt.shape_str() + " vs " +
                                wt.shape_str());
  const int n = xt.dim(0), ci = xt.dim(1), h = xt.dim(2), ww = xt.dim(3);
  const int co = wt.dim(0), kh = wt.dim(2), kw = wt.dim(3);
  const int ho = (h + 2 * pad - dilation * (kh - 1) - 1) / stride + 1;
  const int wo = (ww + 2 * pad - dilation * (kw - 1) - 1) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");
  const int64_t k = int64_t(ci) * kh * kw, l = int64_t(ho) * wo;

  Tensor out({n, co, ho, wo});
  std::vector<double> col(static_cast<size_t>(k * l));
  CMapM wm(wt.data(), co, k);
  for (int i = 0; i < n; ++i) {
    im2col(xt.data() + int64_t(i) * ci * h * ww, ci, h, ww, kh, kw, stride, pad, dilation, ho, wo,
           col.data());
    CMapM cm(col.data(), k, l);
    MapM om(out.data() + int64_t(i) * co * l, co, l);
    om.noalias() = wm * cm;
    for (int c = 0; c < co; ++c) om.row(c).array() += b->value[c];
  }

  return make_op(std::move(out), {x, w, b},
                 [x, w, b, stride, pad, dilation, n, ci, h, ww, co, kh, kw, ho, wo, k, l](Node& nd) {
    std::vector<double> col(static_cast<size_t>(k * l));
    std::vector<double> dcol(static_cast<size_t>(k * l));
    CMapM wm(w->value.data(), co, k);
    if (w->requires_grad) w->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    MapM dwm(w->requires_grad ? w->grad.data() : col.data(), co, k);
    for (int i = 0; i < n; ++i) {
      CMapM gm(nd.grad.data() + int64_t(i) * co * l, co, l);
      if (w->requires_grad || x->requires_grad)
        im2col(x->value.data() + int64_t(i) * ci * h * ww, ci, h, ww, kh, kw, stride, pad, dilation,
               ho, wo, col.data());
      if (w->requires_grad) {
        CMapM cm(col.data(), k, l);
        dwm.noalias() += gm * cm.transpose();
      }
      if (b->requires_grad)
        for (int c = 0; c < co; ++c) b->grad[c] += gm.row(c).sum();
      if (x->requires_grad) {
        MapM dcm(dcol.data(), k, l);
        dcm.noalias() = wm.transpose() * gm;
        col2im_add(dcol.data(), ci, h, ww, kh, kw, stride, pad, dilation, ho, wo,
                   x->grad.data() + int64_t(i) * ci * h * ww);
      }
    }
  });
}

Var max_pool2d(const Var& x, int kernel, int stride, int pad) {
  const Tensor& xt = x->value;
  const int n = xt.dim(0), c = xt.dim(1), h = xt.dim(2), w = xt.dim(3);
  const int ho = (h + 2 * pad - kernel) / stride + 1;
  const int wo = (w + 2 * pad - kernel) / stride + 1;
  Tensor out({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  int64_t o = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = xt.data() + (int64_t(i) * c + ch) * h * w;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox, ++o) {
          double best = -1e308;
          int64_t bi = -1;
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= w) continue;
              double v = plane[int64_t(iy) * w + ix];
              if (v > best) {
                best = v;
                bi = (int64_t(i) * c + ch) * h * w + int64_t(iy) * w + ix;
              }
            }
          }
          out[o] = bi >= 0 ? best : 0.0;
          (*argmax)[static_cast<size_t>(o)] = bi;
        }
    }
  return make_op(std::move(out), {x}, [x, argmax](Node& nd) {
    x->ensure_grad();
    for (int64_t i = 0; i < nd.grad.size(); ++i) {
      int64_t j = (*argmax)[static_cast<size_t>(i)];
      if (j >= 0) x->grad[j] += nd.grad[i];
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  const Tensor& xt = x->value;
  const int n = xt.dim(0), c = xt.dim(1), h = xt.dim(2), w = xt.dim(3);
  if (c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  const int cg = c / groups;
  const int64_t m = int64_t(cg) * h * w;
  Tensor out(xt.shape());
  auto xhat = std::make_shared<Tensor>(xt.shape());
  auto istd = std::make_shared<Tensor>(std::vector<int>{n, groups});
  for (int i = 0; i < n; ++i)
    for (int g = 0; g < groups; ++g) {
      const double* xs = xt.data() + (int64_t(i) * c + int64_t(g) * cg) * h * w;
      double mean = 0.0;
      for (int64_t j = 0; j < m; ++j) mean += xs[j];
      mean /= double(m);
      double var = 0.0;
      for (int64_t j = 0; j < m; ++j) var += (xs[j] - mean) * (xs[j] - mean);
      var /= double(m);
      const double is = 1.0 / std::sqrt(var + eps);
      istd->at2(i, g) = is;
      double* xh = xhat->data() + (int64_t(i) * c + int64_t(g) * cg) * h * w;
      double* os = out.data() + (int64_t(i) * c + int64_t(g) * cg) * h * w;
      for (int cc = 0; cc < cg; ++cc) {
        const double ga = gamma->value[g * cg + cc], be = beta->value[g * cg + cc];
        for (int64_t j = int64_t(cc) * h * w; j < int64_t(cc + 1) * h * w; ++j) {
          xh[j] = (xs[j] - mean) * is;
          os[j] = ga * xh[j] + be;
        }
      }
    }
  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, xhat, istd, n, c, h, w, groups, cg, m](Node& nd) {
    if (gamma->requires_grad) gamma->ensure_grad();
    if (beta->requires_grad) beta->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    const int64_t hw = int64_t(h) * w;
    for (int i = 0; i < n; ++i)
      for (int g = 0; g < groups; ++g) {
        const int64_t base = (int64_t(i) * c + int64_t(g) * cg) * hw;
        const double* gy = nd.grad.data() + base;
        const double* xh = xhat->data() + base;
        if (gamma->requires_grad || beta->requires_grad) {
          for (int cc = 0; cc < cg; ++cc) {
            double dga = 0.0, dbe = 0.0;
            for (int64_t j = cc * hw; j < (cc + 1) * hw; ++j) {
              dga += gy[j] * xh[j];
              dbe += gy[j];
            }
            if (gamma->requires_grad) gamma->grad[g * cg + cc] += dga;
            if (beta->requires_grad) beta->grad[g * cg + cc] += dbe;
          }
        }
        if (!x->requires_grad) continue;
        double s1 = 0.0, s2 = 0.0;
        for (int cc = 0; cc < cg; ++cc) {
          const double ga = gamma->value[g * cg + cc];
          for (int64_t j = cc * hw; j < (cc + 1) * hw; ++j) {
            const double dxh = gy[j] * ga;
            s1 += dxh;
            s2 += dxh * xh[j];
          }
        }
        const double is = istd->at2(i, g);
        double* gx = x->grad.data() + base;
        for (int cc = 0; cc < cg; ++cc) {
          const double ga = gamma->value[g * cg + cc];
          for (int64_t j = cc * hw; j < (cc + 1) * hw; ++j) {
            const double dxh = gy[j] * ga;
            gx[j] += is / double(m) * (double(m) * dxh - s1 - xh[j] * s2);
          }
        }
      }
  });
}

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
  const Tensor& xt = x->value;
  const int n = xt.dim(0), c = xt.dim(1), h = xt.dim(2), w = xt.dim(3);
  Tensor out({n, c, out_h, out_w});
  const double sy = double(h) / out_h, sx = double(w) / out_w;
  // Precompute axis weights (align_corners=false sampling).
  std::vector<int> y0(out_h), y1(out_h), x0(out_w), x1(out_w);
  std::vector<double> wy(out_h), wx(out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    double s = std::max(0.0, (oy + 0.5) * sy - 0.5);
    int f = std::min(int(s), h - 1);
    y0[oy] = f;
    y1[oy] = std::min(f + 1, h - 1);
    wy[oy] = std::min(s - f, 1.0);
  }
  for (int ox = 0; ox < out_w; ++ox) {
    double s = std::max(0.0, (ox + 0.5) * sx - 0.5);
    int f = std::min(int(s), w - 1);
    x0[ox] = f;
    x1[ox] = std::min(f + 1, w - 1);
    wx[ox] = std::min(s - f, 1.0);
  }
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double* p = xt.data() + (int64_t(i) * c + ch) * h * w;
      double* q = out.data() + (int64_t(i) * c + ch) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          const double a = wy[oy], bwt = wx[ox];
          q[int64_t(oy) * out_w + ox] =
              (1 - a) * (1 - bwt) * p[int64_t(y0[oy]) * w + x0[ox]] +
              (1 - a) * bwt * p[int64_t(y0[oy]) * w + x1[ox]] +
              a * (1 - bwt) * p[int64_t(y1[oy]) * w + x0[ox]] +
              a * bwt * p[int64_t(y1[oy]) * w + x1[ox]];
        }
    }
  return make_op(std::move(out), {x},
                 [x, n, c, h, w, out_h, out_w, y0, y1, x0, x1, wy, wx](Node& nd) {
    x->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        double* gp = x->grad.data() + (int64_t(i) * c + ch) * h * w;
        const double* gq = nd.grad.data() + (int64_t(i) * c + ch) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy)
          for (int ox = 0; ox < out_w; ++ox) {
            const double g = gq[int64_t(oy) * out_w + ox];
            const double a = wy[oy], bwt = wx[ox];
            gp[int64_t(y0[oy]) * w + x0[ox]] += (1 - a) * (1 - bwt) * g;
            gp[int64_t(y0[oy]) * w + x1[ox]] += (1 - a) * bwt * g;
            gp[int64_t(y1[oy]) * w + x0[ox]] += a * (1 - bwt) * g;
            gp[int64_t(y1[oy]) * w + x1[ox]] += a * bwt * g;
          }
      }
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty");
  const int n = xs[0]->value.dim(0), h = xs[0]->value.dim(2), w = xs[0]->value.dim(3);
  int ctot = 0;
  for (const auto& v : xs) {
    if (v->value.dim(0) != n || v->value.dim(2) != h || v->value.dim(3) != w)
      throw std::invalid_argument("concat_channels: spatial/batch mismatch");
    ctot += v->value.dim(1);
  }
  Tensor out({n, ctot, h, w});
  const int64_t hw = int64_t(h) * w;
  for (int i = 0; i < n; ++i) {
    int co = 0;
    for (const auto& v : xs) {
      const int c = v->value.dim(1);
      std::copy(v->value.data() + int64_t(i) * c * hw, v->value.data() + int64_t(i + 1) * c * hw,
                out.data() + (int64_t(i) * ctot + co) * hw);
      co += c;
    }
  }
  return make_op(std::move(out), xs, [xs, n, ctot, hw](Node& nd) {
    for (int i = 0; i < n; ++i) {
      int co = 0;
      for (const auto& v : xs) {
        const int c = v->value.dim(1);
        if (v->requires_grad) {
          v->ensure_grad();
          const double* src = nd.grad.data() + (int64_t(i) * ctot + co) * hw;
          double* dst = v->grad.data() + int64_t(i) * c * hw;
          for (int64_t j = 0; j < c * hw; ++j) dst[j] += src[j];
        }
        co += c;
      }
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& xt = x->value;
  const int n = xt.dim(0), c = xt.dim(1);
  const int64_t hw = int64_t(xt.dim(2)) * xt.dim(3);
  Tensor out({n, c});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double* p = xt.data() + (int64_t(i) * c + ch) * hw;
      double s = 0.0;
      for (int64_t j = 0; j < hw; ++j) s += p[j];
      out.at2(i, ch) = s / double(hw);
    }
  return make_op(std::move(out), {x}, [x, n, c, hw](Node& nd) {
    x->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const double g = nd.grad.at2(i, ch) / double(hw);
        double* p = x->grad.data() + (int64_t(i) * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) p[j] += g;
      }
  });
}

Var broadcast_to_map(const Var& v, int h, int w) {
  const int n = v->value.dim(0), c = v->value.dim(1);
  Tensor out({n, c, h, w});
  const int64_t hw = int64_t(h) * w;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      std::fill_n(out.data() + (int64_t(i) * c + ch) * hw, hw, v->value.at2(i, ch));
  return make_op(std::move(out), {v}, [v, n, c, hw](Node& nd) {
    v->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const double* p = nd.grad.data() + (int64_t(i) * c + ch) * hw;
        double s = 0.0;
        for (int64_t j = 0; j < hw; ++j) s += p[j];
        v->grad.at2(i, ch) += s;
      }
  });
}

Var film_modulate(const Var& x, const Var& gamma, const Var& beta) {
  const Tensor& xt = x->value;
  const int n = xt.dim(0), c = xt.dim(1);
  const int64_t hw = int64_t(xt.dim(2)) * xt.dim(3);
  if (gamma->value.shape() != std::vector<int>{n, c} || !gamma->value.same_shape(beta->value))
    throw std::invalid_argument("film_modulate: parameter shape mismatch");
  Tensor out(xt.shape());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double g = gamma->value.at2(i, ch), b = beta->value.at2(i, ch);
      const double* p = xt.data() + (int64_t(i) * c + ch) * hw;
      double* q = out.data() + (int64_t(i) * c + ch) * hw;
      for (int64_t j = 0; j < hw; ++j) q[j] = g * p[j] + b;
    }
  return make_op(std::move(out), {x, gamma, beta}, [x, gamma, beta, n, c, hw](Node& nd) {
    if (x->requires_grad) x->ensure_grad();
    if (gamma->requires_grad) gamma->ensure_grad();
    if (beta->requires_grad) beta->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const int64_t base = (int64_t(i) * c + ch) * hw;
        const double* gy = nd.grad.data() + base;
        const double* p = x->value.data() + base;
        if (x->requires_grad) {
          const double g = gamma->value.at2(i, ch);
          double* gx = x->grad.data() + base;
          for (int64_t j = 0; j < hw; ++j) gx[j] += g * gy[j];
        }
        if (gamma->requires_grad || beta->requires_grad) {
          double dg = 0.0, db = 0.0;
          for (int64_t j = 0; j < hw; ++j) {
            dg += gy[j] * p[j];
            db += gy[j];
          }
          if (gamma->requires_grad) gamma->grad.at2(i, ch) += dg;
          if (beta->requires_grad) beta->grad.at2(i, ch) += db;
        }
      }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const int n = x->value.dim(0), din = x->value.dim(1);
  const int dout = w->value.dim(0);
  if (w->value.dim(1) != din || b->value.dim(0) != dout)
    throw std::invalid_argument("linear: dimension mismatch");
  Tensor out({n, dout});
  CMapM xm(x->value.data(), n, din), wm(w->value.data(), dout, din);
  MapM om(out.data(), n, dout);
  om.noalias() = xm * wm.transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dout; ++j) out.at2(i, j) += b->value[j];
  return make_op(std::move(out), {x, w, b}, [x, w, b, n, din, dout](Node& nd) {
    CMapM gm(nd.grad.data(), n, dout);
    if (w->requires_grad) {
      w->ensure_grad();
      MapM dwm(w->grad.data(), dout, din);
      CMapM xm(x->value.data(), n, din);
      dwm.noalias() += gm.transpose() * xm;
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int j = 0; j < dout; ++j) b->grad[j] += gm.col(j).sum();
    }
    if (x->requires_grad) {
      x->ensure_grad();
      MapM dxm(x->grad.data(), n, din);
      CMapM wm(w->value.data(), dout, din);
      dxm.noalias() += gm * wm;
    }
  });
}

Var tanh_op(const Var& x) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  auto saved = std::make_shared<Tensor>(out);
  return make_op(std::move(out), {x}, [x, saved](Node& nd) {
    x->ensure_grad();
    for (int64_t i = 0; i < nd.grad.size(); ++i) {
      const double y = (*saved)[i];
      x->grad[i] += nd.grad[i] * (1.0 - y * y);
    }
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const int n = x->value.dim(0), d = x->value.dim(1);
  Tensor out({n, d});
  auto xhat = std::make_shared<Tensor>(std::vector<int>{n, d});
  auto istd = std::make_shared<std::vector<double>>(n);
  for (int i = 0; i < n; ++i) {
    const double* p = x->value.data() + int64_t(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += p[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (p[j] - mean) * (p[j] - mean);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*istd)[static_cast<size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      xhat->at2(i, j) = (p[j] - mean) * is;
      out.at2(i, j) = gamma->value[j] * xhat->at2(i, j) + beta->value[j];
    }
  }
  return make_op(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, istd, n, d](Node& nd) {
    if (gamma->requires_grad) gamma->ensure_grad();
    if (beta->requires_grad) beta->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    for (int i = 0; i < n; ++i) {
      double s1 = 0.0, s2 = 0.0;
      for (int j = 0; j < d; ++j) {
        const double gy = nd.grad.at2(i, j);
        if (gamma->requires_grad) gamma->grad[j] += gy * xhat->at2(i, j);
        if (beta->requires_grad) beta->grad[j] += gy;
        const double dxh = gy * gamma->value[j];
        s1 += dxh;
        s2 += dxh * xhat->at2(i, j);
      }
      if (!x->requires_grad) continue;
      const double is = (*istd)[static_cast<size_t>(i)];
      for (int j = 0; j < d; ++j) {
        const double dxh = nd.grad.at2(i, j) * gamma->value[j];
        x->grad.at2(i, j) += is / d * (d * dxh - s1 - xhat->at2(i, j) * s2);
      }
    }
  });
}

Var l2_normalize_rows(const Var& x) {
  const int n = x->value.dim(0), d = x->value.dim(1);
  Tensor out({n, d});
  auto norms = std::make_shared<std::vector<double>>(n);
  for (int i = 0; i < n; ++i) {
    const double* p = x->value.data() + int64_t(i) * d;
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += p[j] * p[j];
    const double nn = std::sqrt(s);
    if (nn < 1e-12) throw std::invalid_argument("l2_normalize: degenerate embedding (zero norm)");
    (*norms)[static_cast<size_t>(i)] = nn;
    for (int j = 0; j < d; ++j) out.at2(i, j) = p[j] / nn;
  }
  auto saved = std::make_shared<Tensor>(out);
  return make_op(std::move(out), {x}, [x, saved, norms, n, d](Node& nd) {
    x->ensure_grad();
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += nd.grad.at2(i, j) * saved->at2(i, j);
      const double nn = (*norms)[static_cast<size_t>(i)];
      for (int j = 0; j < d; ++j)
        x->grad.at2(i, j) += (nd.grad.at2(i, j) - saved->at2(i, j) * dot) / nn;
    }
  });
}

Var concat_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw std::invalid_argument("concat_rows: empty");
  const int d = rows[0]->value.dim(1);
  const int k = static_cast<int>(rows.size());
  Tensor out({k, d});
  for (int i = 0; i < k; ++i) {
    if (rows[static_cast<size_t>(i)]->value.shape() != std::vector<int>{1, d})
      throw std::invalid_argument("concat_rows: each row must be {1,D}");
    std::copy_n(rows[static_cast<size_t>(i)]->value.data(), d, out.data() + int64_t(i) * d);
  }
  return make_op(std::move(out), rows, [rows, d](Node& nd) {
    for (size_t i = 0; i < rows.size(); ++i) {
      if (!rows[i]->requires_grad) continue;
      rows[i]->ensure_grad();
      for (int j = 0; j < d; ++j) rows[i]->grad[j] += nd.grad.at2(static_cast<int>(i), j);
    }
  });
}

Var softmax_channel(const Var& logits) {
  const Tensor& z = logits->value;
  const int n = z.dim(0), c = z.dim(1), h = z.dim(2), w = z.dim(3);
  Tensor out(z.shape());
  const int64_t hw = int64_t(h) * w;
  for (int i = 0; i < n; ++i)
    for (int64_t j = 0; j < hw; ++j) {
      double mx = -1e308;
      for (int ch = 0; ch < c; ++ch) mx = std::max(mx, z[(int64_t(i) * c + ch) * hw + j]);
      double s = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double e = std::exp(z[(int64_t(i) * c + ch) * hw + j] - mx);
        out[(int64_t(i) * c + ch) * hw + j] = e;
        s += e;
      }
      for (int ch = 0; ch < c; ++ch) out[(int64_t(i) * c + ch) * hw + j] /= s;
    }
  auto saved = std::make_shared<Tensor>(out);
  return make_op(std::move(out), {logits}, [logits, saved, n, c, hw](Node& nd) {
    logits->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int64_t j = 0; j < hw; ++j) {
        double dot = 0.0;
        for (int ch = 0; ch < c; ++ch)
          dot += nd.grad[(int64_t(i) * c + ch) * hw + j] * (*saved)[(int64_t(i) * c + ch) * hw + j];
        for (int ch = 0; ch < c; ++ch) {
          const int64_t idx = (int64_t(i) * c + ch) * hw + j;
          logits->grad[idx] += (*saved)[idx] * (nd.grad[idx] - dot);
        }
      }
  });
}

Var dice_loss_op(const Var& p, const Tensor& y, double epsilon) {
  const Tensor& pt = p->value;
  if (!pt.same_shape(y)) throw std::invalid_argument("dice_loss: shape mismatch");
  const int n = pt.dim(0), c = pt.dim(1);
  const int64_t hw = int64_t(pt.dim(2)) * pt.dim(3);
  double total = 0.0;
  auto inter = std::make_shared<Tensor>(std::vector<int>{n, c});
  auto denom = std::make_shared<Tensor>(std::vector<int>{n, c});
  for (int i = 0; i < n; ++i) {
    double item = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double* pp = pt.data() + (int64_t(i) * c + ch) * hw;
      const double* yy = y.data() + (int64_t(i) * c + ch) * hw;
      double in = 0.0, ps = 0.0, ys = 0.0;
      for (int64_t j = 0; j < hw; ++j) {
        in += pp[j] * yy[j];
        ps += pp[j];
        ys += yy[j];
      }
      inter->at2(i, ch) = in;
      denom->at2(i, ch) = ps + ys + epsilon;
      item += 2.0 * in / denom->at2(i, ch);
    }
    total += 1.0 - item / c;
  }
  auto y_saved = std::make_shared<Tensor>(y);
  return make_op(Tensor::scalar(total / n), {p}, [p, y_saved, inter, denom, n, c, hw](Node& nd) {
    p->ensure_grad();
    const double g = nd.grad[0] / double(n);
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const double in = inter->at2(i, ch), dn = denom->at2(i, ch);
        const double* yy = y_saved->data() + (int64_t(i) * c + ch) * hw;
        double* gp = p->grad.data() + (int64_t(i) * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j)
          gp[j] += g * (-(2.0 * yy[j] * dn - 2.0 * in) / (dn * dn) / c);
      }
  });
}

Var weighted_ce_op(const Var& p, const Tensor& y, const std::vector<double>& w) {
  const Tensor& pt = p->value;
  if (!pt.same_shape(y)) throw std::invalid_argument("weighted_ce: shape mismatch");
  const int n = pt.dim(0), c = pt.dim(1);
  if (static_cast<int>(w.size()) != c) throw std::invalid_argument("weighted_ce: bad weight count");
  const int64_t hw = int64_t(pt.dim(2)) * pt.dim(3);
  const int64_t npix = int64_t(n) * hw;
  const double clamp_lo = 1e-12;
  double total = 0.0;
  for (int64_t i = 0; i < pt.size(); ++i) {
    if (y[i] == 0.0) continue;
    const int ch = static_cast<int>((i / hw) % c);
    total -= w[static_cast<size_t>(ch)] * std::log(std::max(pt[i], clamp_lo));
  }
  auto y_saved = std::make_shared<Tensor>(y);
  auto wv = std::make_shared<std::vector<double>>(w);
  return make_op(Tensor::scalar(total / double(npix)), {p},
                 [p, y_saved, wv, c, hw, npix, clamp_lo](Node& nd) {
    p->ensure_grad();
    const double g = nd.grad[0] / double(npix);
    for (int64_t i = 0; i < p->value.size(); ++i) {
      if ((*y_saved)[i] == 0.0) continue;
      if (p->value[i] <= clamp_lo) continue;  // clamp region: flat
      const int ch = static_cast<int>((i / hw) % c);
      p->grad[i] -= g * (*wv)[static_cast<size_t>(ch)] / p->value[i];
    }
  });
}

Var infonce_op(const Var& v_rows, const Var& t_rows, double tau) {
  const Tensor& V = v_rows->value;
  const Tensor& T = t_rows->value;
  if (V.ndim() != 2 || !V.same_shape(T))
    throw std::invalid_argument("infonce: V and T must be matching N x D matrices");
  if (tau <= 0.0) throw std::invalid_argument("infonce: tau must be positive");
  const int n = V.dim(0), d = V.dim(1);
  for (int i = 0; i < n; ++i) {
    for (const Tensor* m : {&V, &T}) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += m->at2(i, j) * m->at2(i, j);
      if (std::abs(std::sqrt(s) - 1.0) > 1e-3)
        throw std::invalid_argument("infonce: unnormalized embedding at row " + std::to_string(i));
    }
  }
  // S = V T^T / tau; loss = (1/2N) sum_i [lse(S_i,:) - S_ii + lse(S_:,i) - S_ii]
  Tensor S({n, n});
  CMapM vm(V.data(), n, d), tm(T.data(), n, d);
  MapM sm(S.data(), n, n);
  sm.noalias() = vm * tm.transpose() / tau;
  auto P = std::make_shared<Tensor>(std::vector<int>{n, n});  // row softmax
  auto Q = std::make_shared<Tensor>(std::vector<int>{n, n});  // column softmax
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double mx = -1e308;
    for (int k = 0; k < n; ++k) mx = std::max(mx, S.at2(i, k));
    double se = 0.0;
    for (int k = 0; k < n; ++k) se += std::exp(S.at2(i, k) - mx);
    for (int k = 0; k < n; ++k) P->at2(i, k) = std::exp(S.at2(i, k) - mx) / se;
    loss += mx + std::log(se) - S.at2(i, i);
  }
  for (int k = 0; k < n; ++k) {
    double mx = -1e308;
    for (int i = 0; i < n; ++i) mx = std::max(mx, S.at2(i, k));
    double se = 0.0;
    for (int i = 0; i < n; ++i) se += std::exp(S.at2(i, k) - mx);
    for (int i = 0; i < n; ++i) Q->at2(i, k) = std::exp(S.at2(i, k) - mx) / se;
    loss += mx + std::log(se) - S.at2(k, k);
  }
  loss /= 2.0 * n;
  return make_op(Tensor::scalar(loss), {v_rows, t_rows}, [v_rows, t_rows, P, Q, tau, n, d](Node& nd) {
    // dL/dS = (1/2N) [(P - I) + (Q - I)]
    Tensor dS({n, n});
    const double g = nd.grad[0] / (2.0 * n);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k)
        dS.at2(i, k) = g * (P->at2(i, k) + Q->at2(i, k) - (i == k ? 2.0 : 0.0));
    CMapM dsm(dS.data(), n, n);
    if (v_rows->requires_grad) {
      v_rows->ensure_grad();
      MapM gv(v_rows->grad.data(), n, d);
      CMapM tm(t_rows->value.data(), n, d);
      gv.noalias() += dsm * tm / tau;
    }
    if (t_rows->requires_grad) {
      t_rows->ensure_grad();
      MapM gt(t_rows->grad.data(), n, d);
      CMapM vm(v_rows->value.data(), n, d);
      gt.noalias() += dsm.transpose() * vm / tau;
    }
  });
}

}  // namespace ag
}  // namespace vlws
