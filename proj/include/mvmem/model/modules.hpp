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

#include "mvmem/optim.hpp"

namespace mvmem::model {

// Parameter descriptors are scalar-type agnostic (they hold ids into a
// ParamStore); forwards are templated on the store's scalar type.

struct LinearDesc {
  int w = -1, b = -1;
  int din = 0, dout = 0;
};

template <class R>
LinearDesc make_linear(nn::ParamStore<R>& ps, const std::string& name, int din, int dout,
                       Rng& rng, bool bias = true, nn::Init init = nn::Init::kHeNormal,
                       bool trainable = true) {
  LinearDesc d;
  d.din = din;
  d.dout = dout;
  d.w = ps.add(name + ".w", {dout, din}, init, rng, trainable);
  if (bias) d.b = ps.add(name + ".b", {dout}, nn::Init::kZero, rng, trainable);
  return d;
}

template <class R>
typename nn::Tape<R>::TP linear_fwd(nn::Tape<R>& tp, const nn::ParamStore<R>& ps,
                                    const LinearDesc& d, typename nn::Tape<R>::TP x) {
  return tp.linear(x, ps.leaf(tp, d.w), d.b >= 0 ? ps.leaf(tp, d.b) : nullptr, d.din, d.dout);
}

struct ConvDesc {
  int w = -1, b = -1;
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
};

template <class R>
ConvDesc make_conv(nn::ParamStore<R>& ps, const std::string& name, int cin, int cout, int k,
                   int stride, Rng& rng, bool trainable = true) {
  ConvDesc d;
  d.cin = cin;
  d.cout = cout;
  d.k = k;
  d.stride = stride;
  d.pad = k / 2;
  d.w = ps.add(name + ".w", {cout, cin, k, k}, nn::Init::kHeNormal, rng, trainable);
  d.b = ps.add(name + ".b", {cout}, nn::Init::kZero, rng, trainable);
  return d;
}

template <class R>
typename nn::Tape<R>::TP conv_fwd(nn::Tape<R>& tp, const nn::ParamStore<R>& ps, const ConvDesc& d,
                                  typename nn::Tape<R>::TP x, int B, int H, int W) {
  return tp.conv2d(x, ps.leaf(tp, d.w), ps.leaf(tp, d.b), B, d.cin, H, W, d.cout, d.k, d.k,
                   d.stride, d.pad);
}

struct NormDesc {
  int g = -1, b = -1;
  int dim = 0;
};

template <class R>
NormDesc make_norm(nn::ParamStore<R>& ps, const std::string& name, int dim, Rng& rng) {
  NormDesc d;
  d.dim = dim;
  d.g = ps.add(name + ".g", {dim}, nn::Init::kOne, rng);
  d.b = ps.add(name + ".b", {dim}, nn::Init::kZero, rng);
  return d;
}

template <class R>
typename nn::Tape<R>::TP norm_fwd(nn::Tape<R>& tp, const nn::ParamStore<R>& ps, const NormDesc& d,
                                  typename nn::Tape<R>::TP x) {
  return tp.layernorm_rows(x, ps.leaf(tp, d.g), ps.leaf(tp, d.b), d.dim);
}

// Low-rank adapter on top of a (usually frozen) linear map.
// effective delta = (alpha / rank) * B (A x); B starts at zero.
struct LoraDesc {
  int a = -1, b = -1;
  int rank = 16;
  double alpha = 16.0;
};

struct LoraLinearDesc {
  LinearDesc base;
  LoraDesc lora;
  bool enabled = false;
};

template <class R>
LoraLinearDesc make_lora_linear(nn::ParamStore<R>& ps, const std::string& name, int din, int dout,
                                Rng& rng, bool base_trainable, bool with_lora, int rank,
                                double alpha) {
  LoraLinearDesc d;
  d.base = make_linear(ps, name, din, dout, rng, true, nn::Init::kHeNormal, base_trainable);
  if (with_lora) {
    d.enabled = true;
    d.lora.rank = rank;
    d.lora.alpha = alpha;
    d.lora.a = ps.add(name + ".lora_a", {rank, din}, nn::Init::kHeNormal, rng, true);
    d.lora.b = ps.add(name + ".lora_b", {dout, rank}, nn::Init::kZero, rng, true);
  }
  return d;
}

template <class R>
typename nn::Tape<R>::TP lora_linear_fwd(nn::Tape<R>& tp, const nn::ParamStore<R>& ps,
                                         const LoraLinearDesc& d, typename nn::Tape<R>::TP x) {
  auto y = linear_fwd(tp, ps, d.base, x);
  if (!d.enabled) return y;
  auto ax = tp.linear(x, ps.leaf(tp, d.lora.a), nullptr, d.base.din, d.lora.rank);
  auto bax = tp.linear(ax, ps.leaf(tp, d.lora.b), nullptr, d.lora.rank, d.base.dout);
  return tp.add(y, tp.scale(bax, R(d.lora.alpha / d.lora.rank)));
}

// --------------------------------------------------------------------------
// Index tables (built once per shape, shared across tapes)
// --------------------------------------------------------------------------

using Table = std::shared_ptr<const std::vector<int>>;

namespace detail {
// Tables are memoized per shape; model code runs single-threaded.
inline std::map<std::array<int, 5>, Table>& table_cache() {
  static std::map<std::array<int, 5>, Table> cache;
  return cache;
}

template <class F>
Table memo_table(std::array<int, 5> key, F&& build) {
  auto& cache = table_cache();
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto t = std::make_shared<std::vector<int>>();
  build(*t);
  cache[key] = t;
  return t;
}
}  // namespace detail

// [N, C, H, W] -> [N*H*W, C]
inline Table table_chw_to_tokens(int N, int C, int H, int W) {
  return detail::memo_table({0, N, C, H, W}, [&](std::vector<int>& t) {
    t.reserve(size_t(N) * C * H * W);
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < H * W; ++i)
        for (int c = 0; c < C; ++c) t.push_back(((n * C + c) * H * W) + i);
  });
}

// [N*H*W, C] -> [N, C, H, W]
inline Table table_tokens_to_chw(int N, int C, int H, int W) {
  return detail::memo_table({1, N, C, H, W}, [&](std::vector<int>& t) {
    t.reserve(size_t(N) * C * H * W);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < H * W; ++i) t.push_back((n * H * W + i) * C + c);
  });
}

// [N, C, S, S] -> [N*G*G, C*P*P] patch flattening (P = patch, G = S/P)
inline Table table_patchify(int N, int C, int S, int P) {
  return detail::memo_table({2, N, C, S, P}, [&](std::vector<int>& t) {
    int G = S / P;
    t.reserve(size_t(N) * G * G * C * P * P);
    for (int n = 0; n < N; ++n)
      for (int gy = 0; gy < G; ++gy)
        for (int gx = 0; gx < G; ++gx)
          for (int c = 0; c < C; ++c)
            for (int py = 0; py < P; ++py)
              for (int px = 0; px < P; ++px)
                t.push_back(((n * C + c) * S + gy * P + py) * S + gx * P + px);
  });
}

// weight-head logits [N, 36, H, W] -> rows [((n*H+i)*W+j)*4+d, 9]
inline Table table_upsample_weights(int N, int H, int W) {
  return detail::memo_table({3, N, H, W, 0}, [&](std::vector<int>& t) {
    t.reserve(size_t(N) * H * W * 36);
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          for (int d = 0; d < 4; ++d)
            for (int k = 0; k < 9; ++k) t.push_back(((n * 36 + d * 9 + k) * H + i) * W + j);
  });
}

// Sinusoidal 2-D positional table for a G x G grid, dim D (row half / col
// half, sin/cos interleaved within each half).
template <class R>
std::vector<R> sincos_pe2d(int G, int D) {
  std::vector<R> pe(size_t(G) * G * D, R(0));
  int half = D / 2;
  int pairs = half / 2;
  for (int r = 0; r < G; ++r)
    for (int c = 0; c < G; ++c) {
      R* row = pe.data() + (size_t(r) * G + c) * D;
      for (int i = 0; i < pairs; ++i) {
        double f = std::pow(100.0, -double(i) / double(pairs));
        row[2 * i] = R(std::sin(r * f));
        row[2 * i + 1] = R(std::cos(r * f));
        row[half + 2 * i] = R(std::sin(c * f));
        row[half + 2 * i + 1] = R(std::cos(c * f));
      }
    }
  return pe;
}

}  // namespace mvmem::model
