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

#include "mvmem/checkpoint.hpp"
#include "mvmem/model/memory.hpp"
#include "mvmem/model/mvt.hpp"
#include "mvmem/model/upsampler.hpp"
#include "mvmem/sim/scene.hpp"

namespace mvmem::model {

struct PolicyConfig {
  int image_size = 64;
  int patch = 8;
  int dim = 128;
  int heads = 4;
  int rot_bins = 72;
  int zoom_factor = 4;          // zoom extent = workspace extent / zoom_factor
  int lora_rank = 16;
  double lora_alpha = 16.0;
  int memory_capacity = 10;     // M
  bool strict_capacity = false;
  bool use_recency = true;
  double rope_base = 100.0;
  bool fuse_multires = true;
  bool enable_pos = true;
  int mem_blocks = 4;
  double cloud_spacing = 0.01;
  uint64_t init_seed = 0;

  int grid() const { return image_size / patch; }

  nlohmann::json to_json() const {
    return {{"image_size", image_size},   {"patch", patch},
            {"dim", dim},                 {"heads", heads},
            {"rot_bins", rot_bins},       {"zoom_factor", zoom_factor},
            {"lora_rank", lora_rank},     {"lora_alpha", lora_alpha},
            {"memory_capacity", memory_capacity},
            {"strict_capacity", strict_capacity},
            {"use_recency", use_recency}, {"rope_base", rope_base},
            {"fuse_multires", fuse_multires},
            {"enable_pos", enable_pos},   {"mem_blocks", mem_blocks},
            {"cloud_spacing", cloud_spacing}};
  }

  static PolicyConfig from_json(const nlohmann::json& j) {
    PolicyConfig c;
    c.image_size = j.value("image_size", 64);
    c.patch = j.value("patch", 8);
    c.dim = j.value("dim", 128);
    c.heads = j.value("heads", 4);
    c.rot_bins = j.value("rot_bins", 72);
    c.zoom_factor = j.value("zoom_factor", 4);
    c.lora_rank = j.value("lora_rank", 16);
    c.lora_alpha = j.value("lora_alpha", 16.0);
    c.memory_capacity = j.value("memory_capacity", 10);
    c.strict_capacity = j.value("strict_capacity", false);
    c.use_recency = j.value("use_recency", true);
    c.rope_base = j.value("rope_base", 100.0);
    c.fuse_multires = j.value("fuse_multires", true);
    c.enable_pos = j.value("enable_pos", true);
    c.mem_blocks = j.value("mem_blocks", 4);
    c.cloud_spacing = j.value("cloud_spacing", 0.01);
    return c;
  }
};

// Table for pulling the RGB channels out of [N, 7, S, S].
inline Table table_rgb(int N, int S) {
  return detail::memo_table({4, N, S, 0, 0}, [&](std::vector<int>& t) {
    t.reserve(size_t(N) * 3 * S * S);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < S * S; ++i) t.push_back((n * 7 + c) * S * S + i);
  });
}

template <class R>
struct CoarseOut {
  typename nn::Tape<R>::TP logits = nullptr;   // [B, 3*S*S]
  typename nn::Tape<R>::TP heatmap = nullptr;  // joint softmax per sample
  typename nn::Tape<R>::TP raw = nullptr;      // [B*3*G*G, dim] unconditioned grids
};

template <class R>
struct FineOut {
  typename nn::Tape<R>::TP logits = nullptr;   // [B, 3*S*S]
  typename nn::Tape<R>::TP heatmap = nullptr;
  typename nn::Tape<R>::TP rot = nullptr;      // [B, 3*rot_bins]
  typename nn::Tape<R>::TP grip = nullptr;     // [B, 1]
  typename nn::Tape<R>::TP col = nullptr;      // [B, 1]
};

// Frozen coarse-trunk activations for one observation, used as constants by
// the stage-2 fine-tuning path.
template <class R>
struct FrozenEmbeds {
  std::vector<R> raw;            // [3*G*G * dim]
  std::vector<R> e1, e2, e3;     // token layouts at 2G, 4G, 8G
};

// Branch = encoder + transformer + upsampler (the fine branch adds heads).
struct BranchDesc {
  EncoderDesc enc;
  MvtDesc mvt;
  UpsamplerDesc ups;
  // fine-only heads
  LinearDesc rot_fc1, rot_fc2, grip_fc1, grip_fc2, col_fc1, col_fc2;
  bool has_heads = false;
};

template <class R>
class Policy {
 public:
  PolicyConfig cfg;
  nn::ParamStore<R> ps;
  BranchDesc coarse, fine;
  MemEncoderDesc mem_enc;
  MemAttnDesc mem_attn;
  Vocab vocab;

  explicit Policy(const PolicyConfig& config) : cfg(config) {
    Rng rng(seed_combine("policy-init", cfg.init_seed));
    vocab = Vocab::build({sim::task_instruction(sim::TaskId::kReopenDrawer),
                          sim::task_instruction(sim::TaskId::kPutBlockBack),
                          sim::task_instruction(sim::TaskId::kRearrangeBlock)});
    coarse = make_branch(ps, "coarse", rng, false);
    fine = make_branch(ps, "fine", rng, true);
    mem_enc = make_mem_encoder(ps, "memory.enc", rng);
    mem_attn = make_mem_attention(ps, "memory.attn", rng, cfg.mem_blocks, cfg.use_recency);
    mem_attn.rope_base = cfg.rope_base;
    pe_grid_ = sincos_pe2d<R>(cfg.grid(), cfg.dim);
  }

  // Reinitializes the memory modules (stage 2 trains them from scratch).
  void reinit_memory(uint64_t seed) {
    Rng rng(seed_combine("memory-reinit", seed));
    for (int i = 0; i < ps.count(); ++i) {
      auto& p = ps.at(i);
      if (p.name.rfind("memory.", 0) != 0) continue;
      Rng local(seed_combine(p.name, seed));
      long fan_in = long(p.value.size()) / std::max(1, p.shape[0]);
      double s = std::sqrt(2.0 / double(fan_in));
      bool zero = p.name.ends_with(".b") || p.name.ends_with(".lora_b");
      bool one = p.name.ends_with(".g");
      bool emb = p.name.find("null_token") != std::string::npos ||
                 p.name.find("recency_emb") != std::string::npos;
      for (auto& v : p.value)
        v = zero ? R(0) : (one ? R(1) : R(local.normal() * (emb ? 0.02 : s)));
    }
    (void)rng;
  }

  const std::vector<R>& pe_grid() const { return pe_grid_; }

  std::vector<int> lang_tokens(sim::TaskId task) const {
    return vocab.encode(sim::task_instruction(task));
  }

  // --- forward paths --------------------------------------------------------

  // views_data: [B, 3, 7, S, S] host buffer that outlives the tape.
  CoarseOut<R> predict_coarse(nn::Tape<R>& tp, const R* views_data, int B,
                              const std::vector<std::vector<int>>& lang,
                              const MemoryBank<R>* bank = nullptr) const {
    const int S = cfg.image_size, G = cfg.grid();
    auto enc_mvt = trunk_forward(tp, coarse, views_data, B, lang);
    auto cond = enc_mvt.grids;
    if (bank) {
      MVMEM_CHECK(B == 1, ContractError, "memory-conditioned forward is per-rollout (B=1)");
      cond = attend_all_views(tp, enc_mvt.grids, *bank);
    }
    CoarseOut<R> out;
    out.raw = enc_mvt.grids;
    auto logits = upsampler_forward(tp, ps, coarse.ups, cond, enc_mvt.e1, enc_mvt.e2, enc_mvt.e3,
                                    B * 3, G, cfg.fuse_multires);
    out.logits = tp.view(logits, {B, 3 * S * S});
    out.heatmap = tp.softmax_rows(out.logits, 3 * S * S);
    return out;
  }

  FineOut<R> predict_fine(nn::Tape<R>& tp, const R* zoomed_views_data, int B,
                          const std::vector<std::vector<int>>& lang) const {
    const int S = cfg.image_size, G = cfg.grid(), n = G * G, dim = cfg.dim;
    auto enc_mvt = trunk_forward(tp, fine, zoomed_views_data, B, lang);
    FineOut<R> out;
    auto logits = upsampler_forward(tp, ps, fine.ups, enc_mvt.grids, enc_mvt.e1, enc_mvt.e2,
                                    enc_mvt.e3, B * 3, G, cfg.fuse_multires);
    out.logits = tp.view(logits, {B, 3 * S * S});
    out.heatmap = tp.softmax_rows(out.logits, 3 * S * S);
    std::vector<typename nn::Tape<R>::TP> means;
    for (int b = 0; b < B; ++b)
      means.push_back(tp.mean_rows(tp.slice_rows(enc_mvt.grids, dim, b * 3 * n, 3 * n), dim));
    auto global = tp.concat_rows(means, dim);
    auto head = [&](const LinearDesc& fc1, const LinearDesc& fc2) {
      return linear_fwd(tp, ps, fc2, tp.gelu(linear_fwd(tp, ps, fc1, global)));
    };
    out.rot = head(fine.rot_fc1, fine.rot_fc2);
    out.grip = head(fine.grip_fc1, fine.grip_fc2);
    out.col = head(fine.col_fc1, fine.col_fc2);
    return out;
  }

  // Frozen coarse activations for the stage-2 cache (no-grad evaluation).
  FrozenEmbeds<R> coarse_trunk_eval(const R* views_data,
                                    const std::vector<std::vector<int>>& lang) const {
    nn::Tape<R> tp;
    auto t = trunk_forward(tp, coarse, views_data, 1, lang);
    FrozenEmbeds<R> out;
    auto grab = [](typename nn::Tape<R>::TP node, std::vector<R>& dst) {
      dst.assign(node->data(), node->data() + node->size);
    };
    grab(t.grids, out.raw);
    grab(t.e1, out.e1);
    grab(t.e2, out.e2);
    grab(t.e3, out.e3);
    return out;
  }

  // Stage-2 forward from cached frozen activations.
  CoarseOut<R> predict_coarse_from_cache(nn::Tape<R>& tp, const FrozenEmbeds<R>& fz,
                                         const MemoryBank<R>* bank,
                                         const std::vector<std::vector<typename nn::Tape<R>::TP>>*
                                             live_entries = nullptr) const {
    const int S = cfg.image_size, G = cfg.grid(), n = G * G, dim = cfg.dim;
    auto raw = tp.constant_view(fz.raw.data(), {3 * n, dim});
    auto e1 = tp.constant_view(fz.e1.data(), {int(fz.e1.size()) / kE1Dim, kE1Dim});
    auto e2 = tp.constant_view(fz.e2.data(), {int(fz.e2.size()) / kE2Dim, kE2Dim});
    auto e3 = tp.constant_view(fz.e3.data(), {int(fz.e3.size()) / kE3Dim, kE3Dim});
    std::vector<typename nn::Tape<R>::TP> conds;
    for (int v = 0; v < 3; ++v) {
      auto slice = tp.slice_rows(raw, dim, v * n, n);
      std::vector<typename nn::Tape<R>::TP> entries;
      if (live_entries) {
        entries = (*live_entries)[v];
      } else if (bank) {
        for (const auto& e : bank->queue(v))
          entries.push_back(tp.constant_view(e.features.data(), {n, kMemDim}));
      }
      conds.push_back(memory_attend(tp, ps, mem_attn, slice, entries, G, pe_grid_));
    }
    auto cond = tp.concat_rows(conds, dim);
    CoarseOut<R> out;
    out.raw = raw;
    auto logits = upsampler_forward(tp, ps, coarse.ups, cond, e1, e2, e3, 3, G,
                                    cfg.fuse_multires);
    out.logits = tp.view(logits, {1, 3 * S * S});
    out.heatmap = tp.softmax_rows(out.logits, 3 * S * S);
    return out;
  }

  // Encodes one step's per-view memories. heatmap/raw are this step's values;
  // returns [3*G*G, 64] (per view stacked).
  typename nn::Tape<R>::TP encode_step_memory(nn::Tape<R>& tp, typename nn::Tape<R>::TP heatmap,
                                              typename nn::Tape<R>::TP raw) const {
    const int S = cfg.image_size;
    auto h = tp.view(heatmap, {3, 1, S, S});
    return encode_memory(tp, ps, mem_enc, h, raw, 3, S);
  }

 private:
  struct TrunkOut {
    typename nn::Tape<R>::TP grids, e1, e2, e3;
  };

  BranchDesc make_branch(nn::ParamStore<R>& store, const std::string& prefix, Rng& rng,
                         bool with_heads) {
    BranchDesc b;
    b.enc = make_encoder(store, prefix + ".enc", rng, cfg.lora_rank, cfg.lora_alpha);
    b.mvt = make_mvt(store, prefix + ".mvt", cfg.image_size, cfg.patch, int(vocab.words.size()),
                     rng);
    b.ups = make_upsampler(store, prefix + ".ups", rng);
    if (with_heads) {
      b.has_heads = true;
      b.rot_fc1 = make_linear(store, prefix + ".rot_fc1", cfg.dim, cfg.dim, rng);
      b.rot_fc2 = make_linear(store, prefix + ".rot_fc2", cfg.dim, 3 * cfg.rot_bins, rng);
      b.grip_fc1 = make_linear(store, prefix + ".grip_fc1", cfg.dim, cfg.dim, rng);
      b.grip_fc2 = make_linear(store, prefix + ".grip_fc2", cfg.dim, 1, rng);
      b.col_fc1 = make_linear(store, prefix + ".col_fc1", cfg.dim, cfg.dim, rng);
      b.col_fc2 = make_linear(store, prefix + ".col_fc2", cfg.dim, 1, rng);
    }
    return b;
  }

  TrunkOut trunk_forward(nn::Tape<R>& tp, const BranchDesc& b, const R* views_data, int B,
                         const std::vector<std::vector<int>>& lang) const {
    const int S = cfg.image_size;
    MVMEM_CHECK(int(lang.size()) == B, ContractError, "lang batch mismatch");
    auto views = tp.constant_view(views_data, {B * 3, 7, S, S});
    auto rgb = tp.reindex(views, table_rgb(B * 3, S), {B * 3, 3, S, S});
    auto enc = encode_views(tp, ps, b.enc, rgb, B * 3, S);
    auto mv = mvt_forward(tp, ps, b.mvt, views, enc.ctx, lang, B, S, cfg.patch, cfg.enable_pos);
    return {mv.grids, enc.e1, enc.e2, enc.e3};
  }

  typename nn::Tape<R>::TP attend_all_views(nn::Tape<R>& tp, typename nn::Tape<R>::TP raw,
                                            const MemoryBank<R>& bank) const {
    const int G = cfg.grid(), n = G * G, dim = cfg.dim;
    std::vector<typename nn::Tape<R>::TP> conds;
    for (int v = 0; v < 3; ++v) {
      auto slice = tp.slice_rows(raw, dim, v * n, n);
      std::vector<typename nn::Tape<R>::TP> entries;
      for (const auto& e : bank.queue(v))
        entries.push_back(tp.constant_view(e.features.data(), {n, kMemDim}));
      conds.push_back(memory_attend(tp, ps, mem_attn, slice, entries, G, pe_grid_));
    }
    return tp.concat_rows(conds, dim);
  }

  std::vector<R> pe_grid_;
};

}  // namespace mvmem::model
