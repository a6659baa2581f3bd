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

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "mvmem/tensor.hpp"

namespace mvmem::nn {

enum class Init { kZero, kHeNormal, kXavier, kOne, kNormal02 };

// Named parameter registry. Ids are dense and stable; values are flat
// row-major buffers in scalar type R.
template <class R>
class ParamStore {
 public:
  struct Param {
    std::string name;
    Shape shape;
    std::vector<R> value;
    bool trainable = true;
  };

  int add(const std::string& name, Shape shape, Init init, Rng& rng, bool trainable = true) {
    MVMEM_CHECK(!index_.count(name), ConfigError, "duplicate parameter " + name);
    Param p;
    p.name = name;
    p.shape = shape;
    p.trainable = trainable;
    long n = shape_size(shape);
    p.value.resize(n);
    switch (init) {
      case Init::kZero:
        std::fill(p.value.begin(), p.value.end(), R(0));
        break;
      case Init::kOne:
        std::fill(p.value.begin(), p.value.end(), R(1));
        break;
      case Init::kHeNormal: {
        // fan_in = product of all dims but the first
        long fan_in = n / std::max(1, shape[0]);
        double s = std::sqrt(2.0 / double(fan_in));
        for (auto& v : p.value) v = R(rng.normal() * s);
        break;
      }
      case Init::kXavier: {
        long fan_in = n / std::max(1, shape[0]);
        long fan_out = shape[0];
        double s = std::sqrt(2.0 / double(fan_in + fan_out));
        for (auto& v : p.value) v = R(rng.normal() * s);
        break;
      }
      case Init::kNormal02:
        for (auto& v : p.value) v = R(rng.normal() * 0.02);
        break;
    }
    params_.push_back(std::move(p));
    int id = int(params_.size()) - 1;
    index_[name] = id;
    return id;
  }

  int count() const { return int(params_.size()); }
  Param& at(int id) { return params_[id]; }
  const Param& at(int id) const { return params_[id]; }
  int find(const std::string& name) const {
    auto it = index_.find(name);
    MVMEM_CHECK(it != index_.end(), ConfigError, "unknown parameter " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  long total_scalars() const {
    long n = 0;
    for (auto& p : params_) n += long(p.value.size());
    return n;
  }

  void set_trainable_by_prefix(const std::vector<std::string>& prefixes, bool trainable) {
    for (auto& p : params_)
      for (auto& pre : prefixes)
        if (p.name.rfind(pre, 0) == 0) p.trainable = trainable;
  }

  void set_all_trainable(bool t) {
    for (auto& p : params_) p.trainable = t;
  }

  typename Tape<R>::TP leaf(Tape<R>& tp, int id) const {
    const Param& p = params_[id];
    return tp.param_leaf(p.value.data(), long(p.value.size()), p.shape, p.trainable, id);
  }

 private:
  std::vector<Param> params_;
  std::map<std::string, int> index_;
};

// Gradient accumulator aligned with a ParamStore.
template <class R>
class GradBuffer {
 public:
  explicit GradBuffer(const ParamStore<R>& ps) {
    grads_.resize(ps.count());
    for (int i = 0; i < ps.count(); ++i) grads_[i].assign(ps.at(i).value.size(), R(0));
  }

  void zero() {
    for (auto& g : grads_) std::fill(g.begin(), g.end(), R(0));
  }

  // Pulls gradients from the tape's parameter leaves.
  void collect(Tape<R>& tp) {
    for (auto* leaf : tp.param_leaves()) {
      if (leaf->grad.size() == 0) continue;
      auto& g = grads_[leaf->pid];
      for (long i = 0; i < leaf->size; ++i) g[i] += leaf->grad[i];
    }
  }

  std::vector<R>& at(int id) { return grads_[id]; }

  double global_norm() const {
    double s = 0;
    for (auto& g : grads_)
      for (R v : g) s += double(v) * double(v);
    return std::sqrt(s);
  }

  void scale(double s) {
    for (auto& g : grads_)
      for (R& v : g) v = R(double(v) * s);
  }

 private:
  std::vector<std::vector<R>> grads_;
};

// Linear warmup followed by cosine decay to zero.
inline double lr_schedule(long step, long warmup, long total, double peak) {
  if (warmup > 0 && step < warmup) return peak * double(step) / double(warmup);
  if (total <= warmup) return peak;
  double t = double(step - warmup) / double(total - warmup);
  t = std::min(1.0, std::max(0.0, t));
  return peak * 0.5 * (1.0 + std::cos(M_PI * t));
}

enum class OptKind { kLamb, kAdamW };

// LAMB (layer-wise trust ratio over Adam moments) with an AdamW fallback.
// Moments are kept in double regardless of parameter precision.
template <class R>
class Optimizer {
 public:
  Optimizer(ParamStore<R>& ps, OptKind kind, double weight_decay)
      : ps_(ps), kind_(kind), wd_(weight_decay) {
    m_.resize(ps.count());
    v_.resize(ps.count());
    for (int i = 0; i < ps.count(); ++i) {
      m_[i].assign(ps.at(i).value.size(), 0.0);
      v_[i].assign(ps.at(i).value.size(), 0.0);
    }
  }

  void step(GradBuffer<R>& gb, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, double(t_));
    double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (int id = 0; id < ps_.count(); ++id) {
      auto& p = ps_.at(id);
      if (!p.trainable) continue;
      auto& g = gb.at(id);
      auto& m = m_[id];
      auto& v = v_[id];
      size_t n = p.value.size();
      double wnorm = 0, unorm = 0;
      std::vector<double> u(kind_ == OptKind::kLamb ? n : 0);
      for (size_t i = 0; i < n; ++i) {
        double gi = double(g[i]);
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        double mh = m[i] / bc1;
        double vh = v[i] / bc2;
        double ui = mh / (std::sqrt(vh) + eps_) + wd_ * double(p.value[i]);
        if (kind_ == OptKind::kLamb) {
          u[i] = ui;
          wnorm += double(p.value[i]) * double(p.value[i]);
          unorm += ui * ui;
        } else {
          p.value[i] = R(double(p.value[i]) - lr * ui);
        }
      }
      if (kind_ == OptKind::kLamb) {
        wnorm = std::sqrt(wnorm);
        unorm = std::sqrt(unorm);
        double trust = (wnorm > 0 && unorm > 0) ? wnorm / unorm : 1.0;
        for (size_t i = 0; i < n; ++i) p.value[i] = R(double(p.value[i]) - lr * trust * u[i]);
      }
    }
  }

  long steps_taken() const { return t_; }

 private:
  ParamStore<R>& ps_;
  OptKind kind_;
  double wd_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-6;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace mvmem::nn
