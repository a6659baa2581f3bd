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

#include <json.hpp>

#include "mvmem/view/render.hpp"

namespace mvmem::sim {

struct ScriptError : std::runtime_error {
  explicit ScriptError(const std::string& m) : std::runtime_error("script error: " + m) {}
};

struct EpisodeStep {
  SceneState state;          // observation before the keyframe executes
  view::VirtualViews views;  // rendering of that observation
  ActionKeyframe keyframe;
};

struct Episode {
  TaskId task = TaskId::kReopenDrawer;
  int variation = 0;
  uint64_t seed = 0;
  std::string instruction;
  std::vector<EpisodeStep> steps;
  int keyframe_count = 0;
  int button_step = -1;  // index of the keyframe that presses the button
  SceneState final_state;
};

struct ScriptOptions {
  int image_size = 64;
  double cloud_spacing = 0.01;
  bool legacy_reopen = false;  // original 8-keyframe reopen_drawer script
  bool render = true;
};

namespace detail {

inline ActionKeyframe kf(Vec3 t, bool open, bool collision = false,
                         Quat rot = Quat::identity()) {
  ActionKeyframe k;
  k.translation = t;
  k.rotation = rot.normalized();
  k.gripper_open = open;
  k.collision_allowed = collision;
  return k;
}

inline std::vector<ActionKeyframe> plan_keyframes(const SceneState& s0, bool legacy_reopen) {
  using namespace geom;
  const Quat yaw90 = Quat::from_yaw(M_PI / 2);
  std::vector<ActionKeyframe> ks;
  const Vec3 btn = button_top(s0);
  const Vec3 btn_above{btn.x, btn.y, btn.z + 0.07};

  switch (s0.task) {
    case TaskId::kReopenDrawer: {
      int slot = s0.variation;
      Vec3 oa = handle_open_anchor(s0, slot);
      Vec3 ca = handle_closed_anchor(s0, slot);
      if (!legacy_reopen) ks.push_back(kf({oa.x, oa.y - 0.06, oa.z}, true, false, yaw90));
      ks.push_back(kf(oa, false, false, yaw90));       // grasp handle
      ks.push_back(kf(ca, false, true, yaw90));        // push closed
      ks.push_back(kf({ca.x, ca.y - 0.08, ca.z}, true, false, yaw90));  // release, retreat
      ks.push_back(kf(btn_above, true));
      ks.push_back(kf(btn, true, true));               // press
      ks.push_back(kf({ca.x, ca.y - 0.06, ca.z}, true, false, yaw90));  // approach same slot
      ks.push_back(kf(ca, false, false, yaw90));       // grasp handle
      ks.push_back(kf(oa, false, true, yaw90));        // pull open
      break;
    }
    case TaskId::kPutBlockBack: {
      Vec3 b = s0.objects.at("block").pos;
      Vec3 patch = s0.objects.at("patch" + std::to_string(s0.variation)).pos;
      Vec3 centre{0.5, 0.5, block_rest_z(false)};
      ks.push_back(kf({b.x, b.y, kHoverZ}, true));
      ks.push_back(kf(b, false, true));                          // grasp block
      ks.push_back(kf({b.x, b.y, kHoverZ}, false));              // lift
      ks.push_back(kf({centre.x, centre.y, kHoverZ}, false));
      ks.push_back(kf(centre, true, true));                      // place at centre
      ks.push_back(kf(btn_above, true));
      ks.push_back(kf(btn, true, true));                         // press
      ks.push_back(kf({patch.x, patch.y, kHoverZ}, true));       // stage above home patch
      ks.push_back(kf(centre, false, true));                     // re-grasp at centre
      ks.push_back(kf({patch.x, patch.y, kHoverZ}, false));
      ks.push_back(kf({patch.x, patch.y, block_rest_z(true)}, true, true));  // place back
      break;
    }
    case TaskId::kRearrangeBlock: {
      Vec3 bb = s0.objects.at("block_b").pos;
      Vec3 home = s0.objects.at("patch" + std::to_string(s0.variation)).pos;
      Vec3 empty = s0.objects.at("patch" + std::to_string(1 - s0.variation)).pos;
      Vec3 centre{0.5, 0.5, block_rest_z(false)};
      Vec3 a_pos{home.x, home.y, block_rest_z(true)};
      ks.push_back(kf({bb.x, bb.y, kHoverZ}, true));
      ks.push_back(kf(bb, false, true));                          // grasp centre block
      ks.push_back(kf({bb.x, bb.y, kHoverZ}, false));
      ks.push_back(kf({empty.x, empty.y, kHoverZ}, false));
      ks.push_back(kf({empty.x, empty.y, block_rest_z(true)}, true, true));  // fill empty patch
      ks.push_back(kf(btn_above, true));
      ks.push_back(kf(btn, true, true));                          // press
      ks.push_back(kf({a_pos.x, a_pos.y, kHoverZ}, true));        // stage above untouched block
      ks.push_back(kf(a_pos, false, true));                       // grasp it
      ks.push_back(kf(centre, true, true));                       // move to centre
      break;
    }
  }
  return ks;
}

}  // namespace detail

inline std::string state_dump(const SceneState& s);

// Expert demonstration: plans keyframes from the reset layout, executes them
// through transition(), and verifies the task succeeds.
inline Episode script_demo(TaskId task, int variation, uint64_t seed,
                           const ScriptOptions& opts = {}) {
  Episode ep;
  ep.task = task;
  ep.variation = variation;
  ep.seed = seed;
  ep.instruction = task_instruction(task);

  SceneState s = reset(task, variation, seed);
  auto ks = detail::plan_keyframes(s, opts.legacy_reopen);
  int expected = task_keyframes(task, opts.legacy_reopen);
  MVMEM_CHECK(int(ks.size()) == expected, ScriptError, "keyframe count mismatch");

  for (size_t i = 0; i < ks.size(); ++i) {
    ks[i].validate();
    EpisodeStep step;
    step.state = s;
    if (opts.render)
      step.views = view::render_views(s, view::workspace_bounds(), opts.image_size,
                                      opts.cloud_spacing);
    step.keyframe = ks[i];
    bool pressed_before = s.button_pressed;
    s = transition(s, ks[i]);
    if (!pressed_before && s.button_pressed) ep.button_step = int(i);
    ep.steps.push_back(std::move(step));
  }
  ep.final_state = s;
  ep.keyframe_count = int(ep.steps.size());
  if (!check_success(task, s))
    throw ScriptError(std::string("scripted demo failed for ") + task_name(task) + " v" +
                      std::to_string(variation) + " seed " + std::to_string(seed) + "\n" +
                      state_dump(s));
  return ep;
}

// ---------------------------------------------------------------------------
// JSON snapshots (used by dataset manifests and error dumps)
// ---------------------------------------------------------------------------

inline nlohmann::json state_to_json(const SceneState& s) {
  nlohmann::json j;
  j["task"] = task_name(s.task);
  j["variation"] = s.variation;
  j["seed"] = s.seed;
  j["button_pressed"] = s.button_pressed;
  j["drawer_open"] = s.drawer_open;
  j["phase_counter"] = s.phase_counter;
  j["gripper"] = {{"pos", {s.gripper.pos.x, s.gripper.pos.y, s.gripper.pos.z}},
                  {"closed", s.gripper.closed},
                  {"holding", s.gripper.holding}};
  for (const auto& [name, o] : s.objects)
    j["objects"][name] = {{"pos", {o.pos.x, o.pos.y, o.pos.z}}, {"yaw", o.yaw}};
  return j;
}

inline SceneState state_from_json(const nlohmann::json& j) {
  SceneState s;
  s.task = task_from_name(j.at("task"));
  s.variation = j.at("variation");
  s.seed = j.at("seed");
  s.button_pressed = j.at("button_pressed");
  s.drawer_open = j.at("drawer_open");
  s.phase_counter = j.at("phase_counter");
  const auto& g = j.at("gripper");
  s.gripper.pos = {g.at("pos")[0], g.at("pos")[1], g.at("pos")[2]};
  s.gripper.closed = g.at("closed");
  s.gripper.holding = g.at("holding");
  if (j.contains("objects"))
    for (auto it = j.at("objects").begin(); it != j.at("objects").end(); ++it) {
      const auto& o = it.value();
      s.objects[it.key()] = {{o.at("pos")[0], o.at("pos")[1], o.at("pos")[2]}, o.at("yaw")};
    }
  return s;
}

inline std::string state_dump(const SceneState& s) { return state_to_json(s).dump(1); }

inline nlohmann::json keyframe_to_json(const ActionKeyframe& k) {
  return {{"t", {k.translation.x, k.translation.y, k.translation.z}},
          {"q", {k.rotation.w, k.rotation.x, k.rotation.y, k.rotation.z}},
          {"gripper_open", k.gripper_open},
          {"collision_allowed", k.collision_allowed}};
}

}  // namespace mvmem::sim
