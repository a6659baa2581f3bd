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

// One 2x convex upsampling stage: 1x1 channel projection C -> C/2, then each
// output pixel is a softmax-weighted combination of the 3x3 coarse
// neighborhood of its parent cell (border neighborhoods clamp). The nine
// weights come from a small conv head over the pre-projection features.
struct UpStageDesc {
  LinearDesc proj;       // C -> C/2 (1x1, token space)
  ConvDesc whead1;       // C -> 64, k3
  ConvDesc whead2;       // 64 -> 36, k1
  NormDesc fuse_norm;    // layer norm over C/2 after fusing E
  int cin = 0;
};

// Cascade 128 -> 64 -> 32 -> 16 over three stages, fusing E1..E3 by
// elementwise addition + layer normalization; ends in a 1-channel head whose
// three per-view maps are jointly softmax-normalized elsewhere.
struct UpsamplerDesc {
  std::array<UpStageDesc, 3> stages;
  LinearDesc head;  // 16 -> 1
};

template <class R>
UpsamplerDesc make_upsampler(nn::ParamStore<R>& ps, const std::string& prefix, Rng& rng) {
  UpsamplerDesc d;
  int c = 128;
  for (int l = 0; l < 3; ++l) {
    auto& st = d.stages[l];
    std::string name = prefix + ".up" + std::to_string(l);
    st.cin = c;
    st.proj = make_linear(ps, name + ".proj", c, c / 2, rng);
    st.whead1 = make_conv(ps, name + ".wh1", c, 64, 3, 1, rng);
    st.whead2 = make_conv(ps, name + ".wh2", 64, 36, 1, 1, rng);
    st.fuse_norm = make_norm(ps, name + ".fuse_norm", c / 2, rng);
    c /= 2;
  }
  d.head = make_linear(ps, prefix + ".head", 16, 1, rng);
  return d;
}

// Single stage on explicit tensors; x is [N, C, H, W] flattened. Returns the
// upsampled (pre-fusion) map [N, C/2, 2H, 2W].
template <class R>
typename nn::Tape<R>::TP convex_upsample(nn::Tape<R>& tp, const nn::ParamStore<R>& ps,
                                         const UpStageDesc& st, typename nn::Tape<R>::TP x, int N,
                                         int C, int H, int W) {
  MVMEM_CHECK(C % 2 == 0, ShapeError, "convex_upsample requires even channel count");
  MVMEM_CHECK(C == st.cin, ShapeError, "stage channel mismatch");
  auto wl = conv_fwd(tp, ps, st.whead2, tp.gelu(conv_fwd(tp, ps, st.whead1, x, N, H, W)), N, H, W);
  auto wrows = tp.reindex(wl, table_upsample_weights(N, H, W), {N * H * W * 4, 9});
  auto wsm = tp.softmax_rows(wrows, 9);
  auto xtok = tp.reindex(x, table_chw_to_tokens(N, C, H, W), {N * H * W, C});
  auto ptok = linear_fwd(tp, ps, st.proj, xtok);
  auto p = tp.reindex(ptok, table_tokens_to_chw(N, C / 2, H, W), {N, C / 2, H, W});
  return tp.convex_combine(p, wsm, N, C / 2, H, W);
}

// Elementwise addition + per-position layer normalization over channels.
template <class R>
typename nn::Tape<R>::TP fuse_stage(nn::Tape<R>& tp, const nn::ParamStore<R>& ps,
                                    const UpStageDesc& st, typename nn::Tape<R>::TP x_up_tokens,
                                    typename nn::Tape<R>::TP e_tokens) {
  MVMEM_CHECK(x_up_tokens->size == e_tokens->size, ShapeError, "fuse_stage size mismatch");
  return norm_fwd(tp, ps, st.fuse_norm, tp.add(x_up_tokens, e_tokens));
}

// Full cascade. x_tokens: [N*G*G, 128] per-view transformer grids; e1..e3 in
// token layout at 2G, 4G, 8G. Returns per-view logits [N, S*S]. When
// fuse_multires is off the encoder embeddings are skipped (normalization is
// still applied).
template <class R>
typename nn::Tape<R>::TP upsampler_forward(nn::Tape<R>& tp, const nn::ParamStore<R>& ps,
                                           const UpsamplerDesc& d,
                                           typename nn::Tape<R>::TP x_tokens,
                                           typename nn::Tape<R>::TP e1, typename nn::Tape<R>::TP e2,
                                           typename nn::Tape<R>::TP e3, int N, int G,
                                           bool fuse_multires = true) {
  typename nn::Tape<R>::TP e[3] = {e1, e2, e3};
  auto x = x_tokens;
  int C = 128, H = G;
  for (int l = 0; l < 3; ++l) {
    auto x_chw = tp.reindex(x, table_tokens_to_chw(N, C, H, H), {N, C, H, H});
    auto up = convex_upsample(tp, ps, d.stages[l], x_chw, N, C, H, H);
    C /= 2;
    H *= 2;
    auto up_tok = tp.reindex(up, table_chw_to_tokens(N, C, H, H), {N * H * H, C});
    if (fuse_multires && e[l])
      x = fuse_stage(tp, ps, d.stages[l], up_tok, e[l]);
    else
      x = norm_fwd(tp, ps, d.stages[l].fuse_norm, up_tok);
  }
  auto logits = linear_fwd(tp, ps, d.head, x);  // [N*S*S, 1]
  return tp.view(logits, {N, H * H});
}

}  // namespace mvmem::model
