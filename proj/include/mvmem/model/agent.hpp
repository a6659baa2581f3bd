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

#include "mvmem/model/policy.hpp"
#include "mvmem/view/lift.hpp"

namespace mvmem::model {

// ---------------------------------------------------------------------------
// Rotation binning: 72 bins of 5 degrees per Euler axis. Encoding rounds to
// the nearest bin centre; decoding returns the centre, so a round trip is off
// by at most half a bin (2.5 degrees) per axis.
// ---------------------------------------------------------------------------

inline int angle_to_bin(double deg, int bins = 72) {
  double w = 360.0 / bins;
  int b = int(std::floor((deg + 180.0) / w + 0.5));
  return ((b % bins) + bins) % bins;
}

inline double bin_to_angle(int bin, int bins = 72) { return bin * (360.0 / bins) - 180.0; }

inline std::array<int, 3> quat_to_bins(const Quat& q, int bins = 72) {
  auto e = quat_to_euler(q);
  return {angle_to_bin(rad2deg(e[0]), bins), angle_to_bin(rad2deg(e[1]), bins),
          angle_to_bin(rad2deg(e[2]), bins)};
}

inline Quat bins_to_quat(const std::array<int, 3>& b, int bins = 72) {
  return euler_to_quat(deg2rad(bin_to_angle(b[0], bins)), deg2rad(bin_to_angle(b[1], bins)),
                       deg2rad(bin_to_angle(b[2], bins)))
      .normalized();
}

// ---------------------------------------------------------------------------
// Action decoding
// ---------------------------------------------------------------------------

template <class R>
struct PolicyOutput {
  std::vector<R> coarse_heatmap;  // [3*S*S], joint-normalized
  std::vector<R> fine_heatmap;    // [3*S*S] over zoomed bounds
  std::vector<R> rotation_logits; // [3*bins]
  R gripper_logit = R(0);
  R collision_logit = R(0);
  Vec3 zoom_center;
  view::Bounds zoom_bounds;
};

// translation = argmax lift of the fine heatmap over the zoomed bounds;
// rotation = per-axis argmax bin; flags by strict > 0 (a zero logit decodes
// to false).
template <class R>
sim::ActionKeyframe decode_action(const PolicyOutput<R>& out, int image_size, int bins = 72) {
  auto lift = view::lift_heatmaps_to_point(out.fine_heatmap, out.zoom_bounds, image_size);
  sim::ActionKeyframe kf;
  kf.translation = clamp01(lift.point);
  std::array<int, 3> b{};
  for (int a = 0; a < 3; ++a) {
    int best = 0;
    R bv = out.rotation_logits[a * bins];
    for (int i = 1; i < bins; ++i)
      if (out.rotation_logits[a * bins + i] > bv) {
        bv = out.rotation_logits[a * bins + i];
        best = i;
      }
    b[a] = best;
  }
  kf.rotation = bins_to_quat(b, bins);
  kf.gripper_open = out.gripper_logit > R(0);
  kf.collision_allowed = out.collision_logit > R(0);
  return kf;
}

// ---------------------------------------------------------------------------
// Closed-loop step (Algorithm-1 iteration)
// ---------------------------------------------------------------------------

template <class R>
struct RolloutState {
  MemoryBank<R> bank;
  int step = 0;
  std::vector<std::string> log;

  explicit RolloutState(int capacity = 10, bool strict = false) : bank(capacity, strict) {}
};

template <class R>
struct StepDebug {
  PolicyOutput<R> out;
  std::array<int, 3> bank_sizes{0, 0, 0};
  bool fell_back = false;
  bool zoom_empty = false;
};

// One policy step: coarse prediction (memory-conditioned when enabled),
// memory write, zoom re-render at the lifted coarse point, fine prediction,
// action decoding. Mutates the rollout state's bank and step counter.
template <class R>
sim::ActionKeyframe act_step(const Policy<R>& policy, RolloutState<R>& rollout,
                             const sim::SceneState& obs, bool use_memory,
                             StepDebug<R>* debug = nullptr) {
  const auto& cfg = policy.cfg;
  const int S = cfg.image_size;
  const view::Bounds ws = view::workspace_bounds();
  auto views = view::render_views(obs, ws, S, cfg.cloud_spacing);
  auto views_data = views.template to_model<R>();
  std::vector<std::vector<int>> lang{policy.lang_tokens(obs.task)};

  PolicyOutput<R> out;
  {
    nn::Tape<R> tp;
    auto coarse = policy.predict_coarse(tp, views_data.data(), 1, lang,
                                        use_memory ? &rollout.bank : nullptr);
    out.coarse_heatmap.assign(coarse.heatmap->data(), coarse.heatmap->data() + 3 * S * S);
    if (use_memory) {
      auto mem = policy.encode_step_memory(tp, coarse.heatmap, coarse.raw);
      const int n = cfg.grid() * cfg.grid();
      for (int v = 0; v < 3; ++v) {
        MemoryEntry<R> e;
        e.features.assign(mem->data() + long(v) * n * kMemDim,
                          mem->data() + long(v + 1) * n * kMemDim);
        e.source_step = rollout.step;
        bank_update(rollout.bank, v, std::move(e));
      }
    }
  }

  // coarse localization -> zoom centre
  Vec3 zoom_center;
  bool fell_back = false;
  try {
    auto lift = view::lift_heatmaps_to_point(out.coarse_heatmap, ws, S);
    zoom_center = lift.point;
  } catch (const view::DegenerateInputError&) {
    zoom_center = ws.center;
    fell_back = true;
    rollout.log.push_back("degenerate coarse heatmap; falling back to workspace center");
  }
  out.zoom_center = zoom_center;
  out.zoom_bounds = {zoom_center, ws.extent / cfg.zoom_factor};

  bool zoom_empty = false;
  std::vector<R> zoom_data;
  try {
    auto zoomed = view::zoom_views(obs, zoom_center, out.zoom_bounds.extent, S,
                                   cfg.cloud_spacing);
    zoom_data = zoomed.template to_model<R>();
  } catch (const view::EmptyRenderError&) {
    zoom_empty = true;
    zoom_data.assign(size_t(3) * 7 * S * S, R(0));
    rollout.log.push_back("empty zoom render; using blank views");
  }

  {
    nn::Tape<R> tp;
    auto fine = policy.predict_fine(tp, zoom_data.data(), 1, lang);
    out.fine_heatmap.assign(fine.heatmap->data(), fine.heatmap->data() + 3 * S * S);
    out.rotation_logits.assign(fine.rot->data(), fine.rot->data() + 3 * cfg.rot_bins);
    out.gripper_logit = fine.grip->data()[0];
    out.collision_logit = fine.col->data()[0];
  }

  auto kf = decode_action(out, S, cfg.rot_bins);
  kf.validate();
  ++rollout.step;
  if (debug) {
    debug->out = std::move(out);
    debug->bank_sizes = {rollout.bank.size(0), rollout.bank.size(1), rollout.bank.size(2)};
    debug->fell_back = fell_back;
    debug->zoom_empty = zoom_empty;
  }
  return kf;
}

}  // namespace mvmem::model
