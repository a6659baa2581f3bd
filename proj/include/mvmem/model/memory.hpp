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

#include <deque>

#include "mvmem/model/modules.hpp"

namespace mvmem::model {

inline constexpr int kMemDim = 64;
inline constexpr int kNumViews = 3;
inline constexpr int kMaxRecency = 16;

// One stored memory: an 8x8 (= G x G) spatial map of 64-dim features.
template <class R>
struct MemoryEntry {
  std::vector<R> features;  // [G*G, 64]
  int recency_index = 0;    // 0 = oldest entry in its queue
  int source_step = 0;
};

// Per-view FIFO queues. Default eviction is the literal push-then-trim rule
// (drop the oldest when the queue length reaches M after a push, so the
// steady-state length is M-1); a strict capacity-M mode exists behind a flag.
template <class R>
class MemoryBank {
 public:
  MemoryBank(int capacity, bool strict_capacity = false)
      : capacity_(capacity), strict_(strict_capacity) {}
  MemoryBank() : MemoryBank(10) {}

  int capacity() const { return capacity_; }
  int size(int view) const { return int(queues_[view].size()); }
  const std::deque<MemoryEntry<R>>& queue(int view) const { return queues_[view]; }

  void push(int view, MemoryEntry<R> entry) {
    MVMEM_CHECK(view >= 0 && view < kNumViews, RangeError, "view index out of range");
    auto& q = queues_[view];
    q.push_back(std::move(entry));
    if (strict_) {
      while (int(q.size()) > capacity_) q.pop_front();
    } else {
      if (int(q.size()) == capacity_) q.pop_front();
    }
    for (size_t i = 0; i < q.size(); ++i) q[i].recency_index = int(i);
  }

  void clear() {
    for (auto& q : queues_) q.clear();
  }

 private:
  int capacity_;
  bool strict_;
  std::array<std::deque<MemoryEntry<R>>, kNumViews> queues_;
};

template <class R>
void bank_update(MemoryBank<R>& bank, int view, MemoryEntry<R> entry) {
  bank.push(view, std::move(entry));
}

// ---------------------------------------------------------------------------
// Memory encoder: downsample the predicted per-view heatmap to the grid
// resolution, add it to the unconditioned view embedding, mix with light
// convolutions and project to 64 channels.
// ---------------------------------------------------------------------------

struct MemEncoderDesc {
  ConvDesc down1, down2, down3;  // 1->32->64->128, stride 2 each
  ConvDesc mix1, mix2;           // 128->128
  LinearDesc proj;               // 128 -> 64
};

template <class R>
MemEncoderDesc make_mem_encoder(nn::ParamStore<R>& ps, const std::string& prefix, Rng& rng) {
  MemEncoderDesc d;
  d.down1 = make_conv(ps, prefix + ".down1", 1, 32, 3, 2, rng);
  d.down2 = make_conv(ps, prefix + ".down2", 32, 64, 3, 2, rng);
  d.down3 = make_conv(ps, prefix + ".down3", 64, 128, 3, 2, rng);
  d.mix1 = make_conv(ps, prefix + ".mix1", 128, 128, 3, 1, rng);
  d.mix2 = make_conv(ps, prefix + ".mix2", 128, 128, 3, 1, rng);
  d.proj = make_linear(ps, prefix + ".proj", 128, kMemDim, rng);
  return d;
}

// heatmaps: [N, 1, S, S] per-view slices (no renormalization required);
// raw_embeds: [N*G*G, 128] unconditioned transformer grids. Output
// [N*G*G, 64] memory features.
template <class R>
typename nn::Tape<R>::TP encode_memory(nn::Tape<R>& tp, const nn::ParamStore<R>& ps,
                                       const MemEncoderDesc& d, typename nn::Tape<R>::TP heatmaps,
                                       typename nn::Tape<R>::TP raw_embeds, int N, int S) {
  int G = S / 8;
  MVMEM_CHECK(heatmaps->size == long(N) * S * S, ShapeError, "encode_memory heatmap dims");
  MVMEM_CHECK(raw_embeds->size == long(N) * G * G * 128, ShapeError, "encode_memory embed dims");
  auto h1 = tp.gelu(conv_fwd(tp, ps, d.down1, heatmaps, N, S, S));
  auto h2 = tp.gelu(conv_fwd(tp, ps, d.down2, h1, N, S / 2, S / 2));
  auto h3 = conv_fwd(tp, ps, d.down3, h2, N, S / 4, S / 4);  // [N,128,G,G]
  auto emb_chw = tp.reindex(raw_embeds, table_tokens_to_chw(N, 128, G, G), {N, 128, G, G});
  auto fused = tp.add(h3, emb_chw);
  auto m = tp.gelu(conv_fwd(tp, ps, d.mix1, fused, N, G, G));
  m = tp.gelu(conv_fwd(tp, ps, d.mix2, m, N, G, G));
  auto tok = tp.reindex(m, table_chw_to_tokens(N, 128, G, G), {N * G * G, 128});
  return linear_fwd(tp, ps, d.proj, tok);  // [N*G*G, 64]
}

// ---------------------------------------------------------------------------
// Memory attention: four pre-norm blocks of self-attention over the view
// embedding, cross-attention to that view's stored memories, and an MLP.
// Queries/keys carry fixed sinusoidal 2-D absolute embeddings plus 2-D RoPE;
// memory keys additionally carry a learned recency embedding. An empty queue
// attends to a single learned null-memory token.
// ---------------------------------------------------------------------------

struct MemBlockDesc {
  NormDesc ln1, ln2, ln3;
  LinearDesc sq, sk, sv, so;      // self attention
  LinearDesc cq, ck, cv, co;      // cross attention; ck/cv lift 64 -> 128
  LinearDesc fc1, fc2;
};

struct MemAttnDesc {
  int dim = 128, heads = 4;
  double rope_base = 100.0;
  std::vector<MemBlockDesc> blocks;
  NormDesc final_ln;
  int null_token = -1;    // [1, 64] learned feature of the null memory
  int recency_emb = -1;   // [kMaxRecency, 128]
  bool use_recency = true;
};

template <class R>
MemAttnDesc make_mem_attention(nn::ParamStore<R>& ps, const std::string& prefix, Rng& rng,
                               int blocks = 4, bool use_recency = true) {
  MemAttnDesc d;
  d.use_recency = use_recency;
  for (int i = 0; i < blocks; ++i) {
    MemBlockDesc b;
    std::string name = prefix + ".blk" + std::to_string(i);
    b.ln1 = make_norm(ps, name + ".ln1", d.dim, rng);
    b.ln2 = make_norm(ps, name + ".ln2", d.dim, rng);
    b.ln3 = make_norm(ps, name + ".ln3", d.dim, rng);
    b.sq = make_linear(ps, name + ".sq", d.dim, d.dim, rng, true, nn::Init::kXavier);
    b.sk = make_linear(ps, name + ".sk", d.dim, d.dim, rng, true, nn::Init::kXavier);
    b.sv = make_linear(ps, name + ".sv", d.dim, d.dim, rng, true, nn::Init::kXavier);
    b.so = make_linear(ps, name + ".so", d.dim, d.dim, rng, true, nn::Init::kXavier);
    b.cq = make_linear(ps, name + ".cq", d.dim, d.dim, rng, true, nn::Init::kXavier);
    b.ck = make_linear(ps, name + ".ck", kMemDim, d.dim, rng, true, nn::Init::kXavier);
    b.cv = make_linear(ps, name + ".cv", kMemDim, d.dim, rng, true, nn::Init::kXavier);
    b.co = make_linear(ps, name + ".co", d.dim, d.dim, rng, true, nn::Init::kXavier);
    b.fc1 = make_linear(ps, name + ".fc1", d.dim, d.dim * 4, rng);
    b.fc2 = make_linear(ps, name + ".fc2", d.dim * 4, d.dim, rng);
    d.blocks.push_back(b);
  }
  d.final_ln = make_norm(ps, prefix + ".final_ln", d.dim, rng);
  d.null_token = ps.add(prefix + ".null_token", {1, kMemDim}, nn::Init::kNormal02, rng);
  d.recency_emb = ps.add(prefix + ".recency_emb", {kMaxRecency, d.dim}, nn::Init::kNormal02, rng);
  return d;
}

// Memory tokens for one view's queue: per entry, G*G tokens of dim 64 plus
// grid positions and the entry's recency distance (0 = newest).
template <class R>
struct MemoryTokens {
  typename nn::Tape<R>::TP feats = nullptr;  // [m, 64]
  std::vector<int> rows, cols;               // grid positions per token
  std::vector<int> ages;                     // recency distance per token
  bool null = false;
  int m = 0;
};

// Entries are supplied as tape nodes so the same path serves both inference
// (value entries wrapped as constants) and window training (live nodes).
template <class R>
MemoryTokens<R> build_memory_tokens(nn::Tape<R>& tp, const nn::ParamStore<R>& ps,
                                    const MemAttnDesc& d,
                                    const std::vector<typename nn::Tape<R>::TP>& entries, int G) {
  MemoryTokens<R> out;
  if (entries.empty()) {
    out.feats = ps.leaf(tp, d.null_token);
    out.rows = {0};
    out.cols = {0};
    out.ages = {0};
    out.null = true;
    out.m = 1;
    return out;
  }
  out.feats = entries.size() == 1 ? entries[0] : tp.concat_rows(entries, kMemDim);
  int L = int(entries.size());
  out.m = L * G * G;
  out.rows.reserve(out.m);
  out.cols.reserve(out.m);
  out.ages.reserve(out.m);
  for (int e = 0; e < L; ++e) {
    int age = std::min(L - 1 - e, kMaxRecency - 1);  // entries come oldest first
    for (int r = 0; r < G; ++r)
      for (int c = 0; c < G; ++c) {
        out.rows.push_back(r);
        out.cols.push_back(c);
        out.ages.push_back(age);
      }
  }
  return out;
}

// raw_embed: [G*G, 128] one view. Returns the memory-conditioned embedding of
// identical shape. Pure with respect to the bank.
template <class R>
typename nn::Tape<R>::TP memory_attend(nn::Tape<R>& tp, const nn::ParamStore<R>& ps,
                                       const MemAttnDesc& d, typename nn::Tape<R>::TP raw_embed,
                                       const std::vector<typename nn::Tape<R>::TP>& entries,
                                       int G, const std::vector<R>& pe_grid) {
  const int dim = d.dim, n = G * G, dh = dim / d.heads;
  for (auto* e : entries)
    MVMEM_CHECK(e->size % kMemDim == 0 && e->size == long(n) * kMemDim, ShapeError,
                "memory entry feature dim must be 64 over the grid");
  MVMEM_CHECK(raw_embed->size == long(n) * dim, ShapeError, "memory_attend embed dims");

  std::vector<int> grid_rows(n), grid_cols(n);
  for (int r = 0; r < G; ++r)
    for (int c = 0; c < G; ++c) {
      grid_rows[r * G + c] = r;
      grid_cols[r * G + c] = c;
    }
  auto pe = tp.constant_view(pe_grid.data(), {n, dim});
  auto mem = build_memory_tokens(tp, ps, d, entries, G);

  auto x = raw_embed;
  for (const auto& b : d.blocks) {
    // self attention
    auto h = norm_fwd(tp, ps, b.ln1, x);
    auto hq = tp.add(h, pe);
    auto q = tp.rope2d(linear_fwd(tp, ps, b.sq, hq), dim, dh, grid_rows, grid_cols,
                       R(d.rope_base));
    auto k = tp.rope2d(linear_fwd(tp, ps, b.sk, hq), dim, dh, grid_rows, grid_cols,
                       R(d.rope_base));
    auto v = linear_fwd(tp, ps, b.sv, h);
    x = tp.add(x, linear_fwd(tp, ps, b.so, tp.mha(q, k, v, 1, n, n, dim, d.heads)));

    // cross attention to memories
    auto h2 = norm_fwd(tp, ps, b.ln2, x);
    auto q2 = tp.rope2d(linear_fwd(tp, ps, b.cq, tp.add(h2, pe)), dim, dh, grid_rows, grid_cols,
                        R(d.rope_base));
    auto kmem = linear_fwd(tp, ps, b.ck, mem.feats);
    auto vmem = linear_fwd(tp, ps, b.cv, mem.feats);
    if (!mem.null) {
      kmem = tp.add(kmem, tp.gather_rows(pe, dim, [&] {
                      std::vector<int> idx(mem.m);
                      for (int i = 0; i < mem.m; ++i) idx[i] = mem.rows[i] * G + mem.cols[i];
                      return idx;
                    }()));
      if (d.use_recency)
        kmem = tp.add(kmem, tp.gather_rows(ps.leaf(tp, d.recency_emb), dim, mem.ages));
    }
    kmem = tp.rope2d(kmem, dim, dh, mem.rows, mem.cols, R(d.rope_base));
    x = tp.add(x, linear_fwd(tp, ps, b.co, tp.mha(q2, kmem, vmem, 1, n, mem.m, dim, d.heads)));

    // mlp
    auto h3 = norm_fwd(tp, ps, b.ln3, x);
    x = tp.add(x, linear_fwd(tp, ps, b.fc2, tp.gelu(linear_fwd(tp, ps, b.fc1, h3))));
  }
  return norm_fwd(tp, ps, d.final_ln, x);
}

}  // namespace mvmem::model
