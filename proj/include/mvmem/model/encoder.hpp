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

#include "mvmem/model/modules.hpp"

namespace mvmem::model {

// Hierarchical image encoder (foundation-encoder stand-in). The convolutional
// trunk is fixed at its random initialization; adaptation happens through
// rank-16 adapters on the four projection heads. Only the RGB channels feed
// the trunk; depth and coordinate channels reach the transformer through the
// patchify path instead.
//
// Feature plan for image size S (G = S/8):
//   stem  conv3x3 s1   3 -> 32   @ S      -> E3 head 32 -> 16
//   d1    conv3x3 s2  32 -> 48   @ S/2    -> E2 head 48 -> 32
//   d2    conv3x3 s2  48 -> 64   @ S/4    -> E1 head 64 -> 64
//   d3    conv3x3 s2  64 -> 96   @ S/8    -> context head 96 -> 128
struct EncoderDesc {
  ConvDesc stem, d1, d2, d3;
  LoraLinearDesc e3_head, e2_head, e1_head, ctx_head;
};

inline constexpr int kE1Dim = 64, kE2Dim = 32, kE3Dim = 16, kCtxDim = 128;

template <class R>
EncoderDesc make_encoder(nn::ParamStore<R>& ps, const std::string& prefix, Rng& rng, int lora_rank,
                         double lora_alpha, bool with_lora = true) {
  EncoderDesc d;
  d.stem = make_conv(ps, prefix + ".stem", 3, 32, 3, 1, rng, /*trainable=*/false);
  d.d1 = make_conv(ps, prefix + ".d1", 32, 48, 3, 2, rng, false);
  d.d2 = make_conv(ps, prefix + ".d2", 48, 64, 3, 2, rng, false);
  d.d3 = make_conv(ps, prefix + ".d3", 64, 96, 3, 2, rng, false);
  d.e3_head = make_lora_linear(ps, prefix + ".e3_head", 32, kE3Dim, rng, false, with_lora,
                               lora_rank, lora_alpha);
  d.e2_head = make_lora_linear(ps, prefix + ".e2_head", 48, kE2Dim, rng, false, with_lora,
                               lora_rank, lora_alpha);
  d.e1_head = make_lora_linear(ps, prefix + ".e1_head", 64, kE1Dim, rng, false, with_lora,
                               lora_rank, lora_alpha);
  d.ctx_head = make_lora_linear(ps, prefix + ".ctx_head", 96, kCtxDim, rng, false, with_lora,
                                lora_rank, lora_alpha);
  return d;
}

// Multi-resolution embeddings in token layout: El is [N*(Hl*Wl), Cl] with
// (C1,C2,C3) = (64,32,16) at spatial S/4, S/2, S; context is [N*G*G, 128].
template <class R>
struct MultiResEmbeddings {
  typename nn::Tape<R>::TP e1 = nullptr, e2 = nullptr, e3 = nullptr, ctx = nullptr;
  int image_size = 0;
};

// views_rgb: [N, 3, S, S] node. Returns per-level token embeddings.
template <class R>
MultiResEmbeddings<R> encode_views(nn::Tape<R>& tp, const nn::ParamStore<R>& ps,
                                   const EncoderDesc& d, typename nn::Tape<R>::TP rgb, int N,
                                   int S) {
  MVMEM_CHECK(rgb->size == long(N) * 3 * S * S, ShapeError, "encoder expects [N,3,S,S]");
  auto f0 = tp.gelu(conv_fwd(tp, ps, d.stem, rgb, N, S, S));       // [N,32,S,S]
  auto f1 = tp.gelu(conv_fwd(tp, ps, d.d1, f0, N, S, S));          // [N,48,S/2,S/2]
  auto f2 = tp.gelu(conv_fwd(tp, ps, d.d2, f1, N, S / 2, S / 2));  // [N,64,S/4,S/4]
  auto f3 = tp.gelu(conv_fwd(tp, ps, d.d3, f2, N, S / 4, S / 4));  // [N,96,S/8,S/8]

  auto tok = [&](typename nn::Tape<R>::TP x, int C, int side) {
    return tp.reindex(x, table_chw_to_tokens(N, C, side, side), {N * side * side, C});
  };
  MultiResEmbeddings<R> out;
  out.image_size = S;
  out.e3 = lora_linear_fwd(tp, ps, d.e3_head, tok(f0, 32, S));
  out.e2 = lora_linear_fwd(tp, ps, d.e2_head, tok(f1, 48, S / 2));
  out.e1 = lora_linear_fwd(tp, ps, d.e1_head, tok(f2, 64, S / 4));
  out.ctx = lora_linear_fwd(tp, ps, d.ctx_head, tok(f3, 96, S / 8));
  return out;
}

}  // namespace mvmem::model
