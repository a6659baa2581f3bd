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

#include <sstream>

#include "mvmem/model/encoder.hpp"

namespace mvmem::model {

// ---------------------------------------------------------------------------
// Language tokens: a learned embedding table over the small fixed vocabulary
// of the instruction templates.
// ---------------------------------------------------------------------------

inline constexpr int kMaxLangTokens = 16;

struct Vocab {
  std::vector<std::string> words;  // index 0 is <pad>

  int lookup(const std::string& w) const {
    for (size_t i = 0; i < words.size(); ++i)
      if (words[i] == w) return int(i);
    return 0;
  }

  // Lowercases, strips punctuation, splits on spaces.
  static std::vector<std::string> split(const std::string& text) {
    std::string clean;
    for (char c : text) {
      if (std::isalpha(uint8_t(c)) || std::isdigit(uint8_t(c)))
        clean.push_back(char(std::tolower(uint8_t(c))));
      else if (c == ' ' || c == ',' || c == '.')
        clean.push_back(' ');
    }
    std::istringstream ss(clean);
    std::vector<std::string> out;
    std::string w;
    while (ss >> w) out.push_back(w);
    return out;
  }

  static Vocab build(const std::vector<std::string>& texts) {
    Vocab v;
    v.words.push_back("<pad>");
    for (const auto& t : texts)
      for (const auto& w : split(t))
        if (v.lookup(w) == 0 && w != "<pad>") v.words.push_back(w);
    MVMEM_CHECK(int(v.words.size()) <= 64, ContractError, "vocabulary exceeds 64 words");
    return v;
  }

  // Fixed-length id sequence, zero padded.
  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split(text)) {
      MVMEM_CHECK(int(ids.size()) < kMaxLangTokens, ContractError, "instruction too long");
      ids.push_back(lookup(w));
    }
    while (int(ids.size()) < kMaxLangTokens) ids.push_back(0);
    return ids;
  }
};

// ---------------------------------------------------------------------------
// Multi-view transformer: token assembly, four per-view attention layers,
// four joint attention layers over all image tokens plus language tokens.
// ---------------------------------------------------------------------------

struct AttnLayerDesc {
  NormDesc ln1, ln2;
  LinearDesc q, k, v, o, fc1, fc2;
};

template <class R>
AttnLayerDesc make_attn_layer(nn::ParamStore<R>& ps, const std::string& name, int dim,
                              int mlp_ratio, Rng& rng) {
  AttnLayerDesc d;
  d.ln1 = make_norm(ps, name + ".ln1", dim, rng);
  d.ln2 = make_norm(ps, name + ".ln2", dim, rng);
  d.q = make_linear(ps, name + ".q", dim, dim, rng, true, nn::Init::kXavier);
  d.k = make_linear(ps, name + ".k", dim, dim, rng, true, nn::Init::kXavier);
  d.v = make_linear(ps, name + ".v", dim, dim, rng, true, nn::Init::kXavier);
  d.o = make_linear(ps, name + ".o", dim, dim, rng, true, nn::Init::kXavier);
  d.fc1 = make_linear(ps, name + ".fc1", dim, dim * mlp_ratio, rng);
  d.fc2 = make_linear(ps, name + ".fc2", dim * mlp_ratio, dim, rng);
  return d;
}

// Pre-norm self-attention block over G groups of n tokens.
template <class R>
typename nn::Tape<R>::TP attn_layer_fwd(nn::Tape<R>& tp, const nn::ParamStore<R>& ps,
                                        const AttnLayerDesc& d, typename nn::Tape<R>::TP x, int G,
                                        int n, int dim, int heads) {
  auto h = norm_fwd(tp, ps, d.ln1, x);
  auto att = tp.mha(linear_fwd(tp, ps, d.q, h), linear_fwd(tp, ps, d.k, h),
                    linear_fwd(tp, ps, d.v, h), G, n, n, dim, heads);
  x = tp.add(x, linear_fwd(tp, ps, d.o, att));
  auto h2 = norm_fwd(tp, ps, d.ln2, x);
  x = tp.add(x, linear_fwd(tp, ps, d.fc2, tp.gelu(linear_fwd(tp, ps, d.fc1, h2))));
  return x;
}

struct MvtDesc {
  int dim = 128, heads = 4, mlp_ratio = 4;
  LinearDesc patch_proj;  // 7*P*P -> dim
  LinearDesc ctx_proj;    // 128 -> dim
  int pos2d = -1;         // [G*G, dim] learned grid embedding
  int view_emb = -1;      // [3, dim]
  int type_emb = -1;      // [3, dim] patch / context / language
  int lang_table = -1;    // [vocab, dim]
  int lang_pos = -1;      // [kMaxLangTokens, dim]
  std::vector<AttnLayerDesc> per_view, joint;
};

template <class R>
MvtDesc make_mvt(nn::ParamStore<R>& ps, const std::string& prefix, int image_size, int patch,
                 int vocab_size, Rng& rng, int layers_per_view = 4, int layers_joint = 4) {
  MvtDesc d;
  int G = image_size / patch;
  d.patch_proj = make_linear(ps, prefix + ".patch_proj", 7 * patch * patch, d.dim, rng);
  d.ctx_proj = make_linear(ps, prefix + ".ctx_proj", kCtxDim, d.dim, rng);
  d.pos2d = ps.add(prefix + ".pos2d", {G * G, d.dim}, nn::Init::kNormal02, rng);
  d.view_emb = ps.add(prefix + ".view_emb", {3, d.dim}, nn::Init::kNormal02, rng);
  d.type_emb = ps.add(prefix + ".type_emb", {3, d.dim}, nn::Init::kNormal02, rng);
  d.lang_table = ps.add(prefix + ".lang_table", {vocab_size, d.dim}, nn::Init::kNormal02, rng);
  d.lang_pos = ps.add(prefix + ".lang_pos", {kMaxLangTokens, d.dim}, nn::Init::kNormal02, rng);
  for (int i = 0; i < layers_per_view; ++i)
    d.per_view.push_back(make_attn_layer(ps, prefix + ".pv" + std::to_string(i), d.dim,
                                         d.mlp_ratio, rng));
  for (int i = 0; i < layers_joint; ++i)
    d.joint.push_back(make_attn_layer(ps, prefix + ".j" + std::to_string(i), d.dim, d.mlp_ratio,
                                      rng));
  return d;
}

// Per-view output grids: [B*V*G*G, dim] patch tokens after both stages.
template <class R>
struct MvtOut {
  typename nn::Tape<R>::TP grids = nullptr;       // [B*3*G*G, dim]
  typename nn::Tape<R>::TP stage1_out = nullptr;  // per-view tokens before joint stage
};

// views: [B*3, 7, S, S]; ctx: [B*3*G*G, 128]; lang ids per sample.
template <class R>
MvtOut<R> mvt_forward(nn::Tape<R>& tp, const nn::ParamStore<R>& ps, const MvtDesc& d,
                      typename nn::Tape<R>::TP views, typename nn::Tape<R>::TP ctx,
                      const std::vector<std::vector<int>>& lang_ids, int B, int S, int patch,
                      bool enable_pos = true, int joint_layers_override = -1) {
  const int V = 3, G = S / patch, n = G * G;
  const int dim = d.dim;
  MVMEM_CHECK(!lang_ids.empty() && int(lang_ids.size()) == B, ContractError,
              "instruction tokens required");
  const int L = int(lang_ids[0].size());

  // patch tokens
  auto patches = tp.reindex(views, table_patchify(B * V, 7, S, patch),
                            {B * V * n, 7 * patch * patch});
  auto ptok = linear_fwd(tp, ps, d.patch_proj, patches);
  auto ctok = linear_fwd(tp, ps, d.ctx_proj, ctx);

  auto pos = ps.leaf(tp, d.pos2d);
  auto type = ps.leaf(tp, d.type_emb);
  auto viewe = ps.leaf(tp, d.view_emb);
  // additive embeddings, broadcast over B*V
  std::vector<int> grid_rows(size_t(B) * V * n), view_rows(size_t(B) * V * n);
  for (int bv = 0; bv < B * V; ++bv)
    for (int i = 0; i < n; ++i) {
      grid_rows[size_t(bv) * n + i] = i;
      view_rows[size_t(bv) * n + i] = bv % V;
    }
  if (enable_pos) ptok = tp.add(ptok, tp.gather_rows(pos, dim, grid_rows));
  ptok = tp.add(ptok, tp.gather_rows(viewe, dim, view_rows));
  ptok = tp.add(ptok, tp.gather_rows(type, dim, std::vector<int>(size_t(B) * V * n, 0)));
  if (enable_pos) ctok = tp.add(ctok, tp.gather_rows(pos, dim, grid_rows));
  ctok = tp.add(ctok, tp.gather_rows(viewe, dim, view_rows));
  ctok = tp.add(ctok, tp.gather_rows(type, dim, std::vector<int>(size_t(B) * V * n, 1)));

  // interleave per (b, v): [patch tokens; context tokens]
  std::vector<typename nn::Tape<R>::TP> parts;
  for (int bv = 0; bv < B * V; ++bv) {
    parts.push_back(tp.slice_rows(ptok, dim, bv * n, n));
    parts.push_back(tp.slice_rows(ctok, dim, bv * n, n));
  }
  auto x = tp.concat_rows(parts, dim);  // [B*V*2n, dim]

  // stage 1: per-view attention
  for (const auto& layer : d.per_view)
    x = attn_layer_fwd(tp, ps, layer, x, B * V, 2 * n, dim, d.heads);
  MvtOut<R> out;
  out.stage1_out = x;

  // language tokens
  std::vector<int> lang_rows, lpos_rows;
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < L; ++i) {
      lang_rows.push_back(lang_ids[b][i]);
      lpos_rows.push_back(i);
    }
  auto ltok = tp.gather_rows(ps.leaf(tp, d.lang_table), dim, lang_rows);
  if (enable_pos) ltok = tp.add(ltok, tp.gather_rows(ps.leaf(tp, d.lang_pos), dim, lpos_rows));
  ltok = tp.add(ltok, tp.gather_rows(type, dim, std::vector<int>(lang_rows.size(), 2)));

  // stage 2: joint attention over all image tokens + language tokens
  std::vector<typename nn::Tape<R>::TP> jparts;
  for (int b = 0; b < B; ++b) {
    jparts.push_back(tp.slice_rows(x, dim, b * V * 2 * n, V * 2 * n));
    jparts.push_back(tp.slice_rows(ltok, dim, b * L, L));
  }
  auto j = tp.concat_rows(jparts, dim);
  int jn = V * 2 * n + L;
  int n_joint = joint_layers_override >= 0 ? joint_layers_override : int(d.joint.size());
  for (int li = 0; li < n_joint; ++li)
    j = attn_layer_fwd(tp, ps, d.joint[li], j, B, jn, dim, d.heads);

  // collect per-view patch-token grids
  std::vector<typename nn::Tape<R>::TP> grids;
  for (int b = 0; b < B; ++b)
    for (int v = 0; v < V; ++v) grids.push_back(tp.slice_rows(j, dim, b * jn + v * 2 * n, n));
  out.grids = tp.concat_rows(grids, dim);  // [B*V*n, dim]
  return out;
}

}  // namespace mvmem::model
