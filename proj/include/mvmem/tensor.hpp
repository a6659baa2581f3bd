// Copyright 2026 The mvmem Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <vector>

#include "mvmem/common.hpp"

namespace mvmem::nn {

using Shape = std::vector<int>;

inline long shape_size(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

// Reverse-mode autodiff on a per-forward tape. Nodes are created in
// topological order; backward() walks them in reverse. Values are flat
// row-major buffers; ops that need 2-D structure take explicit dims.
template <class R>
class Tape {
 public:
  using Arr = Eigen::Array<R, Eigen::Dynamic, 1>;
  using MatRM = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const MatRM>;
  using MMap = Eigen::Map<MatRM>;

  struct Node {
    Shape shape;
    Arr val;              // owned storage (empty for external views)
    const R* ext = nullptr;  // external data for leaf/view nodes
    long size = 0;
    bool rg = false;  // requires grad
    int pid = -1;     // parameter id for parameter leaves
    Arr grad;         // lazily allocated
    std::function<void()> back;

    const R* data() const { return ext ? ext : val.data(); }
  };
  using TP = Node*;

  // --- node creation -------------------------------------------------------

  TP alloc(Shape shape, bool rg) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.shape = std::move(shape);
    n.size = shape_size(n.shape);
    n.val.resize(n.size);
    n.rg = rg;
    order_.push_back(&n);
    return &n;
  }

  TP constant(const std::vector<R>& data, Shape shape, bool rg = false) {
    TP n = alloc(std::move(shape), rg);
    MVMEM_CHECK(long(data.size()) == n->size, ShapeError, "constant size mismatch");
    std::copy(data.begin(), data.end(), n->val.data());
    return n;
  }

  TP constant_fill(R value, Shape shape) {
    TP n = alloc(std::move(shape), false);
    n->val.setConstant(value);
    return n;
  }

  // Aliases external storage; the storage must outlive the tape.
  TP constant_view(const R* data, Shape shape) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.shape = std::move(shape);
    n.size = shape_size(n.shape);
    n.ext = data;
    order_.push_back(&n);
    return &n;
  }

  // Parameter leaf: aliases the parameter value, records pid for the
  // gradient collection pass.
  TP param_leaf(const R* data, long size, Shape shape, bool trainable, int pid) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.shape = std::move(shape);
    n.size = size;
    MVMEM_CHECK(shape_size(n.shape) == size, ShapeError, "param shape mismatch");
    n.ext = data;
    n.rg = trainable;
    n.pid = pid;
    order_.push_back(&n);
    if (trainable) param_leaves_.push_back(&n);
    return &n;
  }

  Arr& gref(TP n) {
    if (n->grad.size() == 0) {
      n->grad.resize(n->size);
      n->grad.setZero();
    }
    return n->grad;
  }

  // --- elementwise ---------------------------------------------------------

  TP add(TP a, TP b) {
    MVMEM_CHECK(a->size == b->size, ShapeError, "add size mismatch");
    TP o = alloc(a->shape, a->rg || b->rg);
    o->val = Eigen::Map<const Arr>(a->data(), a->size) + Eigen::Map<const Arr>(b->data(), b->size);
    if (o->rg)
      o->back = [this, o, a, b] {
        if (a->rg) gref(a) += o->grad;
        if (b->rg) gref(b) += o->grad;
      };
    return o;
  }

  TP sub(TP a, TP b) {
    MVMEM_CHECK(a->size == b->size, ShapeError, "sub size mismatch");
    TP o = alloc(a->shape, a->rg || b->rg);
    o->val = Eigen::Map<const Arr>(a->data(), a->size) - Eigen::Map<const Arr>(b->data(), b->size);
    if (o->rg)
      o->back = [this, o, a, b] {
        if (a->rg) gref(a) += o->grad;
        if (b->rg) gref(b) -= o->grad;
      };
    return o;
  }

  TP mul(TP a, TP b) {
    MVMEM_CHECK(a->size == b->size, ShapeError, "mul size mismatch");
    TP o = alloc(a->shape, a->rg || b->rg);
    o->val = Eigen::Map<const Arr>(a->data(), a->size) * Eigen::Map<const Arr>(b->data(), b->size);
    if (o->rg)
      o->back = [this, o, a, b] {
        if (a->rg) gref(a) += o->grad * Eigen::Map<const Arr>(b->data(), b->size);
        if (b->rg) gref(b) += o->grad * Eigen::Map<const Arr>(a->data(), a->size);
      };
    return o;
  }

  TP scale(TP a, R s) {
    TP o = alloc(a->shape, a->rg);
    o->val = Eigen::Map<const Arr>(a->data(), a->size) * s;
    if (o->rg)
      o->back = [this, o, a, s] { gref(a) += o->grad * s; };
    return o;
  }

  TP relu(TP a) {
    TP o = alloc(a->shape, a->rg);
    o->val = Eigen::Map<const Arr>(a->data(), a->size).max(R(0));
    if (o->rg)
      o->back = [this, o, a] {
        gref(a) += o->grad * (Eigen::Map<const Arr>(a->data(), a->size) > R(0)).template cast<R>();
      };
    return o;
  }

  TP gelu(TP a) {
    TP o = alloc(a->shape, a->rg);
    const R* x = a->data();
    for (long i = 0; i < a->size; ++i) {
      R cdf = R(0.5) * (R(1) + std::erf(x[i] * R(M_SQRT1_2)));
      o->val[i] = x[i] * cdf;
    }
    if (o->rg)
      o->back = [this, o, a] {
        Arr& g = gref(a);
        const R* x = a->data();
        const R inv_sqrt2pi = R(0.3989422804014326779);
        for (long i = 0; i < a->size; ++i) {
          R cdf = R(0.5) * (R(1) + std::erf(x[i] * R(M_SQRT1_2)));
          R pdf = inv_sqrt2pi * std::exp(R(-0.5) * x[i] * x[i]);
          g[i] += o->grad[i] * (cdf + x[i] * pdf);
        }
      };
    return o;
  }

  // --- shape plumbing ------------------------------------------------------

  // Zero-copy reinterpretation of the same buffer.
  TP view(TP a, Shape shape) {
    MVMEM_CHECK(shape_size(shape) == a->size, ShapeError, "view size mismatch");
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.shape = std::move(shape);
    n.size = a->size;
    n.ext = a->data();
    n.rg = a->rg;
    order_.push_back(&n);
    TP o = &n;
    if (o->rg)
      o->back = [this, o, a] { gref(a) += o->grad; };
    return o;
  }

  // Contiguous row slice of a row-major [n, d] tensor (zero copy).
  TP slice_rows(TP a, int d, int begin, int count) {
    MVMEM_CHECK(a->size % d == 0, ShapeError, "slice_rows dims");
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.shape = {count, d};
    n.size = long(count) * d;
    n.ext = a->data() + long(begin) * d;
    n.rg = a->rg;
    order_.push_back(&n);
    TP o = &n;
    if (o->rg)
      o->back = [this, o, a, d, begin] {
        gref(a).segment(long(begin) * d, o->size) += o->grad;
      };
    return o;
  }

  TP concat_rows(const std::vector<TP>& parts, int d) {
    long rows = 0;
    bool rg = false;
    for (TP p : parts) {
      MVMEM_CHECK(p->size % d == 0, ShapeError, "concat_rows dims");
      rows += p->size / d;
      rg = rg || p->rg;
    }
    TP o = alloc({int(rows), d}, rg);
    long off = 0;
    for (TP p : parts) {
      std::copy(p->data(), p->data() + p->size, o->val.data() + off);
      off += p->size;
    }
    if (o->rg) {
      std::vector<TP> ps = parts;
      o->back = [this, o, ps] {
        long off = 0;
        for (TP p : ps) {
          if (p->rg) gref(p) += o->grad.segment(off, p->size);
          off += p->size;
        }
      };
    }
    return o;
  }

  // General gather: out[i] = idx[i] < 0 ? 0 : x[idx[i]]. Covers patchify,
  // transposes and pixel shuffles with precomputed tables.
  TP reindex(TP a, std::shared_ptr<const std::vector<int>> idx, Shape shape) {
    TP o = alloc(std::move(shape), a->rg);
    MVMEM_CHECK(long(idx->size()) == o->size, ShapeError, "reindex table size");
    const R* x = a->data();
    const auto& t = *idx;
    for (long i = 0; i < o->size; ++i) o->val[i] = t[i] < 0 ? R(0) : x[t[i]];
    if (o->rg)
      o->back = [this, o, a, idx] {
        Arr& g = gref(a);
        const auto& t = *idx;
        for (long i = 0; i < o->size; ++i)
          if (t[i] >= 0) g[t[i]] += o->grad[i];
      };
    return o;
  }

  TP gather_rows(TP a, int d, std::vector<int> rows) {
    TP o = alloc({int(rows.size()), d}, a->rg);
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy(a->data() + long(rows[i]) * d, a->data() + long(rows[i] + 1) * d,
                o->val.data() + long(i) * d);
    if (o->rg)
      o->back = [this, o, a, d, rows = std::move(rows)] {
        Arr& g = gref(a);
        for (size_t i = 0; i < rows.size(); ++i)
          g.segment(long(rows[i]) * d, d) += o->grad.segment(long(i) * d, d);
      };
    return o;
  }

  // --- dense algebra -------------------------------------------------------

  TP matmul(TP a, TP b, int m, int k, int n) {
    MVMEM_CHECK(a->size == long(m) * k && b->size == long(k) * n, ShapeError, "matmul dims");
    TP o = alloc({m, n}, a->rg || b->rg);
    MMap(o->val.data(), m, n).noalias() = CMap(a->data(), m, k) * CMap(b->data(), k, n);
    if (o->rg)
      o->back = [this, o, a, b, m, k, n] {
        CMap g(o->grad.data(), m, n);
        if (a->rg) MMap(gref(a).data(), m, k).noalias() += g * CMap(b->data(), k, n).transpose();
        if (b->rg) MMap(gref(b).data(), k, n).noalias() += CMap(a->data(), m, k).transpose() * g;
      };
    return o;
  }

  // y = x * W^T + bias, x: [n, din], W: [dout, din], bias: [dout] or null.
  TP linear(TP x, TP w, TP bias, int din, int dout) {
    MVMEM_CHECK(x->size % din == 0, ShapeError, "linear input dims");
    MVMEM_CHECK(w->size == long(dout) * din, ShapeError, "linear weight dims");
    int n = int(x->size / din);
    TP o = alloc({n, dout}, x->rg || w->rg || (bias && bias->rg));
    MMap y(o->val.data(), n, dout);
    y.noalias() = CMap(x->data(), n, din) * CMap(w->data(), dout, din).transpose();
    if (bias) y.rowwise() += Eigen::Map<const Eigen::Matrix<R, 1, Eigen::Dynamic>>(bias->data(), dout);
    if (o->rg)
      o->back = [this, o, x, w, bias, din, dout, n] {
        CMap g(o->grad.data(), n, dout);
        if (x->rg) MMap(gref(x).data(), n, din).noalias() += g * CMap(w->data(), dout, din);
        if (w->rg)
          MMap(gref(w).data(), dout, din).noalias() += g.transpose() * CMap(x->data(), n, din);
        if (bias && bias->rg)
          Eigen::Map<Eigen::Matrix<R, Eigen::Dynamic, 1>>(gref(bias).data(), dout) +=
              g.colwise().sum().transpose();
      };
    return o;
  }

  TP add_bias_rows(TP x, TP bias, int d) {
    MVMEM_CHECK(x->size % d == 0 && bias->size == d, ShapeError, "add_bias_rows dims");
    int n = int(x->size / d);
    TP o = alloc(x->shape, x->rg || bias->rg);
    MMap(o->val.data(), n, d) = CMap(x->data(), n, d);
    MMap(o->val.data(), n, d).rowwise() +=
        Eigen::Map<const Eigen::Matrix<R, 1, Eigen::Dynamic>>(bias->data(), d);
    if (o->rg)
      o->back = [this, o, x, bias, d, n] {
        if (x->rg) gref(x) += o->grad;
        if (bias->rg)
          Eigen::Map<Eigen::Matrix<R, Eigen::Dynamic, 1>>(gref(bias).data(), d) +=
              CMap(o->grad.data(), n, d).colwise().sum().transpose();
      };
    return o;
  }

  // --- normalization & softmax ---------------------------------------------

  TP layernorm_rows(TP x, TP gamma, TP beta, int d, R eps = R(1e-5)) {
    MVMEM_CHECK(x->size % d == 0, ShapeError, "layernorm dims");
    int n = int(x->size / d);
    TP o = alloc(x->shape, x->rg || gamma->rg || beta->rg);
    auto xhat = std::make_shared<Arr>(x->size);
    auto rstd = std::make_shared<Arr>(n);
    for (int i = 0; i < n; ++i) {
      Eigen::Map<const Arr> xi(x->data() + long(i) * d, d);
      R mu = xi.mean();
      R var = (xi - mu).square().mean();
      R rs = R(1) / std::sqrt(var + eps);
      (*rstd)[i] = rs;
      Eigen::Map<Arr> xh(xhat->data() + long(i) * d, d);
      xh = (xi - mu) * rs;
      Eigen::Map<Arr>(o->val.data() + long(i) * d, d) =
          xh * Eigen::Map<const Arr>(gamma->data(), d) + Eigen::Map<const Arr>(beta->data(), d);
    }
    if (o->rg)
      o->back = [this, o, x, gamma, beta, d, n, xhat, rstd] {
        for (int i = 0; i < n; ++i) {
          Eigen::Map<const Arr> g(o->grad.data() + long(i) * d, d);
          Eigen::Map<const Arr> xh(xhat->data() + long(i) * d, d);
          if (gamma->rg) gref(gamma) += g * xh;
          if (beta->rg) gref(beta) += g;
          if (x->rg) {
            Arr gg = g * Eigen::Map<const Arr>(gamma->data(), d);
            R m1 = gg.mean();
            R m2 = (gg * xh).mean();
            Eigen::Map<Arr>(gref(x).data() + long(i) * d, d) += (gg - m1 - xh * m2) * (*rstd)[i];
          }
        }
      };
    return o;
  }

  TP softmax_rows(TP x, int d) {
    MVMEM_CHECK(x->size % d == 0, ShapeError, "softmax dims");
    int n = int(x->size / d);
    TP o = alloc(x->shape, x->rg);
    for (int i = 0; i < n; ++i) {
      Eigen::Map<const Arr> xi(x->data() + long(i) * d, d);
      Eigen::Map<Arr> yi(o->val.data() + long(i) * d, d);
      R m = xi.maxCoeff();
      yi = (xi - m).exp();
      yi /= yi.sum();
    }
    if (o->rg)
      o->back = [this, o, x, d, n] {
        for (int i = 0; i < n; ++i) {
          Eigen::Map<const Arr> p(o->val.data() + long(i) * d, d);
          Eigen::Map<const Arr> g(o->grad.data() + long(i) * d, d);
          R dot = (g * p).sum();
          Eigen::Map<Arr>(gref(x).data() + long(i) * d, d) += p * (g - dot);
        }
      };
    return o;
  }

  // --- reductions ----------------------------------------------------------

  TP mean_rows(TP x, int d) {
    MVMEM_CHECK(x->size % d == 0, ShapeError, "mean_rows dims");
    int n = int(x->size / d);
    TP o = alloc({1, d}, x->rg);
    MMap(o->val.data(), 1, d) = CMap(x->data(), n, d).colwise().mean();
    if (o->rg)
      o->back = [this, o, x, d, n] {
        MMap g(gref(x).data(), n, d);
        g.rowwise() +=
            Eigen::Map<const Eigen::Matrix<R, 1, Eigen::Dynamic>>(o->grad.data(), d) / R(n);
      };
    return o;
  }

  TP sum_all(TP x) {
    TP o = alloc({1}, x->rg);
    o->val[0] = Eigen::Map<const Arr>(x->data(), x->size).sum();
    if (o->rg)
      o->back = [this, o, x] { gref(x) += o->grad[0]; };
    return o;
  }

  TP mean_all(TP x) {
    TP o = alloc({1}, x->rg);
    o->val[0] = Eigen::Map<const Arr>(x->data(), x->size).mean();
    if (o->rg)
      o->back = [this, o, x] { gref(x) += o->grad[0] / R(x->size); };
    return o;
  }

  // --- losses ---------------------------------------------------------------

  // Per-row cross entropy against a sparse target distribution.
  // logits: [rows, d]; targets[i] lists (index, prob) pairs for row i.
  TP ce_rows_soft(TP logits, int d, std::vector<std::vector<std::pair<int, R>>> targets) {
    int n = int(logits->size / d);
    MVMEM_CHECK(int(targets.size()) == n, ShapeError, "ce target rows");
    TP o = alloc({n}, logits->rg);
    auto probs = logits->rg ? std::make_shared<Arr>(logits->size) : nullptr;
    for (int i = 0; i < n; ++i) {
      Eigen::Map<const Arr> xi(logits->data() + long(i) * d, d);
      R m = xi.maxCoeff();
      Arr e = (xi - m).exp();
      R z = e.sum();
      R lse = m + std::log(z);
      R loss = 0;
      for (auto& [idx, p] : targets[i]) loss += p * (lse - xi[idx]);
      o->val[i] = loss;
      if (probs) Eigen::Map<Arr>(probs->data() + long(i) * d, d) = e / z;
    }
    if (o->rg)
      o->back = [this, o, logits, d, n, targets = std::move(targets), probs] {
        Arr& g = gref(logits);
        for (int i = 0; i < n; ++i) {
          R w = 0;
          for (auto& [idx, p] : targets[i]) w += p;
          Eigen::Map<Arr>(g.data() + long(i) * d, d) +=
              o->grad[i] * w * Eigen::Map<const Arr>(probs->data() + long(i) * d, d);
          for (auto& [idx, p] : targets[i]) g[long(i) * d + idx] -= o->grad[i] * p;
        }
      };
    return o;
  }

  // Stable binary cross entropy with logits; targets are constants.
  TP bce_logits(TP x, std::vector<R> y) {
    MVMEM_CHECK(long(y.size()) == x->size, ShapeError, "bce dims");
    TP o = alloc(x->shape, x->rg);
    const R* xv = x->data();
    for (long i = 0; i < x->size; ++i) {
      R v = xv[i];
      o->val[i] = std::max(v, R(0)) - v * y[i] + std::log1p(std::exp(-std::fabs(v)));
    }
    if (o->rg)
      o->back = [this, o, x, y = std::move(y)] {
        Arr& g = gref(x);
        const R* xv = x->data();
        for (long i = 0; i < x->size; ++i) {
          R s = R(1) / (R(1) + std::exp(-xv[i]));
          g[i] += o->grad[i] * (s - y[i]);
        }
      };
    return o;
  }

  // --- attention ------------------------------------------------------------

  // Fused multi-head attention over G independent groups.
  // q: [G*n, D], k/v: [G*m, D]; returns [G*n, D]. Plain softmax attention.
  TP mha(TP q, TP k, TP v, int G, int n, int m, int D, int heads) {
    MVMEM_CHECK(D % heads == 0, ShapeError, "mha head dims");
    MVMEM_CHECK(q->size == long(G) * n * D && k->size == long(G) * m * D && k->size == v->size,
                ShapeError, "mha dims");
    int dh = D / heads;
    R scl = R(1) / std::sqrt(R(dh));
    TP o = alloc({G * n, D}, q->rg || k->rg || v->rg);
    auto P = std::make_shared<std::vector<MatRM>>();
    P->reserve(size_t(G) * heads);
    for (int g = 0; g < G; ++g) {
      CMap Q(q->data() + long(g) * n * D, n, D);
      CMap K(k->data() + long(g) * m * D, m, D);
      CMap V(v->data() + long(g) * m * D, m, D);
      MMap O(o->val.data() + long(g) * n * D, n, D);
      for (int h = 0; h < heads; ++h) {
        MatRM L = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose() * scl;
        for (int i = 0; i < n; ++i) {
          R mx = L.row(i).maxCoeff();
          L.row(i) = (L.row(i).array() - mx).exp();
          L.row(i) /= L.row(i).sum();
        }
        O.middleCols(h * dh, dh).noalias() = L * V.middleCols(h * dh, dh);
        P->push_back(std::move(L));
      }
    }
    if (o->rg)
      o->back = [this, o, q, k, v, G, n, m, D, heads, dh, scl, P] {
        for (int g = 0; g < G; ++g) {
          CMap Q(q->data() + long(g) * n * D, n, D);
          CMap K(k->data() + long(g) * m * D, m, D);
          CMap V(v->data() + long(g) * m * D, m, D);
          CMap gO(o->grad.data() + long(g) * n * D, n, D);
          for (int h = 0; h < heads; ++h) {
            const MatRM& Ph = (*P)[size_t(g) * heads + h];
            MatRM gP = gO.middleCols(h * dh, dh) * V.middleCols(h * dh, dh).transpose();
            if (v->rg)
              MMap(gref(v).data() + long(g) * m * D, m, D).middleCols(h * dh, dh).noalias() +=
                  Ph.transpose() * gO.middleCols(h * dh, dh);
            Eigen::Matrix<R, Eigen::Dynamic, 1> rs = (gP.array() * Ph.array()).rowwise().sum();
            MatRM gL = Ph.array() * (gP.colwise() - rs).array();
            if (q->rg)
              MMap(gref(q).data() + long(g) * n * D, n, D).middleCols(h * dh, dh).noalias() +=
                  gL * K.middleCols(h * dh, dh) * scl;
            if (k->rg)
              MMap(gref(k).data() + long(g) * m * D, m, D).middleCols(h * dh, dh).noalias() +=
                  gL.transpose() * Q.middleCols(h * dh, dh) * scl;
          }
        }
      };
    return o;
  }

  // Axial 2-D rotary embedding applied per head slice. Within each head of
  // width dh, the first dh/2 dims rotate by the row angle and the second
  // half by the column angle, in (even, odd) pairs. Norm preserving.
  TP rope2d(TP x, int D, int dh, std::vector<int> rows, std::vector<int> cols, R base) {
    int n = int(x->size / D);
    MVMEM_CHECK(int(rows.size()) == n && int(cols.size()) == n, ShapeError, "rope positions");
    MVMEM_CHECK(dh % 4 == 0 && D % dh == 0, ShapeError, "rope dims");
    int quarter = dh / 4;
    std::vector<R> freqs(quarter);
    for (int i = 0; i < quarter; ++i) freqs[i] = std::pow(base, -R(i) / R(quarter));
    TP o = alloc(x->shape, x->rg);
    auto rotate = [freqs, D, dh, quarter](const R* src, R* dst, long nrows,
                                          const std::vector<int>& rr, const std::vector<int>& cc,
                                          R sign) {
      for (long t = 0; t < nrows; ++t) {
        for (int headoff = 0; headoff < D; headoff += dh) {
          for (int i = 0; i < quarter; ++i) {
            // row-axis pairs then col-axis pairs
            for (int axis = 0; axis < 2; ++axis) {
              R pos = R(axis == 0 ? rr[t] : cc[t]);
              R ang = sign * pos * freqs[i];
              R c = std::cos(ang), s = std::sin(ang);
              long base_i = t * D + headoff + axis * (dh / 2) + 2 * i;
              R a = src[base_i], b = src[base_i + 1];
              dst[base_i] = a * c - b * s;
              dst[base_i + 1] = a * s + b * c;
            }
          }
        }
      }
    };
    rotate(x->data(), o->val.data(), n, rows, cols, R(1));
    if (o->rg)
      o->back = [this, o, x, D, n, rows = std::move(rows), cols = std::move(cols), rotate] {
        Arr tmp(o->size);
        rotate(o->grad.data(), tmp.data(), n, rows, cols, R(-1));
        gref(x) += tmp;
      };
    return o;
  }

  // --- convolution -----------------------------------------------------------

  // 2-D convolution, zero padding, square kernel. x: [B, C, H, W],
  // w: [O, C, kh, kw], bias: [O] or null. Uses im2col + GEMM.
  TP conv2d(TP x, TP w, TP bias, int B, int C, int H, int W, int O, int kh, int kw, int stride,
            int pad) {
    MVMEM_CHECK(x->size == long(B) * C * H * W, ShapeError, "conv input dims");
    MVMEM_CHECK(w->size == long(O) * C * kh * kw, ShapeError, "conv weight dims");
    int OH = (H + 2 * pad - kh) / stride + 1;
    int OW = (W + 2 * pad - kw) / stride + 1;
    int K = C * kh * kw;
    auto idx = conv_table(C, H, W, kh, kw, stride, pad, OH, OW);
    long hw = long(OH) * OW;
    auto cols = std::make_shared<MatRM>(B * hw, K);
    for (int b = 0; b < B; ++b) {
      const R* xb = x->data() + long(b) * C * H * W;
      R* cb = cols->data() + long(b) * hw * K;
      const int* t = idx->data();
      for (long i = 0; i < hw * K; ++i) cb[i] = t[i] < 0 ? R(0) : xb[t[i]];
    }
    TP o = alloc({B, O, OH, OW}, x->rg || w->rg || (bias && bias->rg));
    // y = cols * W^T -> [B*hw, O]; transpose per image to [O, hw]
    MatRM y = (*cols) * CMap(w->data(), O, K).transpose();
    if (bias)
      y.rowwise() += Eigen::Map<const Eigen::Matrix<R, 1, Eigen::Dynamic>>(bias->data(), O);
    for (int b = 0; b < B; ++b)
      MMap(o->val.data() + long(b) * O * hw, O, hw) =
          y.middleRows(long(b) * hw, hw).transpose();
    if (o->rg)
      o->back = [this, o, x, w, bias, B, C, H, W, O, K, hw, idx, cols] {
        MatRM gy(B * hw, O);
        for (int b = 0; b < B; ++b)
          gy.middleRows(long(b) * hw, hw) =
              CMap(o->grad.data() + long(b) * O * hw, O, hw).transpose();
        if (w->rg) MMap(gref(w).data(), O, K).noalias() += gy.transpose() * (*cols);
        if (bias && bias->rg)
          Eigen::Map<Eigen::Matrix<R, Eigen::Dynamic, 1>>(gref(bias).data(), O) +=
              gy.colwise().sum().transpose();
        if (x->rg) {
          MatRM gcols = gy * CMap(w->data(), O, K);
          Arr& gx = gref(x);
          for (int b = 0; b < B; ++b) {
            R* gxb = gx.data() + long(b) * C * H * W;
            const R* gc = gcols.data() + long(b) * hw * K;
            const int* t = idx->data();
            for (long i = 0; i < hw * K; ++i)
              if (t[i] >= 0) gxb[t[i]] += gc[i];
          }
        }
      };
    return o;
  }

  // Convex combination step of the 2x upsampler. p: [N, C, H, W] coarse
  // features (already channel-projected), wsm: [N*H*W*4, 9] softmax weights
  // (rows ordered n, i, j, di*2+dj). Neighborhood indices clamp at borders.
  // Returns [N, C, 2H, 2W].
  TP convex_combine(TP p, TP wsm, int N, int C, int H, int W) {
    MVMEM_CHECK(p->size == long(N) * C * H * W, ShapeError, "convex p dims");
    MVMEM_CHECK(wsm->size == long(N) * H * W * 36, ShapeError, "convex w dims");
    TP o = alloc({N, C, 2 * H, 2 * W}, p->rg || wsm->rg);
    auto clampi = [](int a, int lo, int hi) { return a < lo ? lo : (a > hi ? hi : a); };
    const R* pv = p->data();
    const R* wv = wsm->data();
    R* ov = o->val.data();
    long ohw = 4L * H * W;
    for (int nn_ = 0; nn_ < N; ++nn_)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          for (int d = 0; d < 4; ++d) {
            int oy = 2 * i + d / 2, ox = 2 * j + d % 2;
            const R* wrow = wv + ((long(nn_) * H + i) * W + j) * 4 * 9 + long(d) * 9;
            for (int c = 0; c < C; ++c) {
              const R* pc = pv + (long(nn_) * C + c) * H * W;
              R acc = 0;
              for (int t = 0; t < 9; ++t) {
                int ci = clampi(i + t / 3 - 1, 0, H - 1);
                int cj = clampi(j + t % 3 - 1, 0, W - 1);
                acc += wrow[t] * pc[ci * W + cj];
              }
              ov[(long(nn_) * C + c) * ohw + long(oy) * 2 * W + ox] = acc;
            }
          }
    if (o->rg)
      o->back = [this, o, p, wsm, N, C, H, W, clampi, ohw] {
        const R* pv = p->data();
        const R* wv = wsm->data();
        R* gp = p->rg ? gref(p).data() : nullptr;
        R* gw = wsm->rg ? gref(wsm).data() : nullptr;
        for (int nn_ = 0; nn_ < N; ++nn_)
          for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
              for (int d = 0; d < 4; ++d) {
                int oy = 2 * i + d / 2, ox = 2 * j + d % 2;
                long wbase = ((long(nn_) * H + i) * W + j) * 36 + long(d) * 9;
                for (int c = 0; c < C; ++c) {
                  long pbase = (long(nn_) * C + c) * H * W;
                  R go = o->grad[(long(nn_) * C + c) * ohw + long(oy) * 2 * W + ox];
                  if (go == R(0)) continue;
                  for (int t = 0; t < 9; ++t) {
                    int ci = clampi(i + t / 3 - 1, 0, H - 1);
                    int cj = clampi(j + t % 3 - 1, 0, W - 1);
                    if (gp) gp[pbase + ci * W + cj] += wv[wbase + t] * go;
                    if (gw) gw[wbase + t] += pv[pbase + ci * W + cj] * go;
                  }
                }
              }
      };
    return o;
  }

  // --- driver ----------------------------------------------------------------

  void backward(TP root) {
    gref(root).setConstant(R(1));
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node* node = *it;
      if (node->grad.size() != 0 && node->back) node->back();
    }
  }

  const std::vector<TP>& param_leaves() const { return param_leaves_; }

  size_t num_nodes() const { return order_.size(); }

 private:
  using TableKey = std::array<int, 7>;

  std::shared_ptr<std::vector<int>> conv_table(int C, int H, int W, int kh, int kw, int stride,
                                               int pad, int OH, int OW) {
    TableKey key{C, H, W, kh, kw, stride, pad};
    auto it = conv_tables_.find(key);
    if (it != conv_tables_.end()) return it->second;
    auto t = std::make_shared<std::vector<int>>();
    t->resize(long(OH) * OW * C * kh * kw);
    long i = 0;
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox)
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              int iy = oy * stride + ky - pad;
              int ix = ox * stride + kx - pad;
              (*t)[i++] = (iy < 0 || iy >= H || ix < 0 || ix >= W) ? -1 : (c * H + iy) * W + ix;
            }
    conv_tables_[key] = t;
    return t;
  }

  std::deque<Node> nodes_;
  std::vector<TP> order_;
  std::vector<TP> param_leaves_;
  std::map<TableKey, std::shared_ptr<std::vector<int>>> conv_tables_;
};

}  // namespace mvmem::nn
