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

#include <array>
#include <map>
#include <optional>
#include <string>

#include "mvmem/common.hpp"

namespace mvmem::sim {

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

enum class TaskId { kReopenDrawer, kPutBlockBack, kRearrangeBlock };

inline const char* task_name(TaskId t) {
  switch (t) {
    case TaskId::kReopenDrawer: return "reopen_drawer";
    case TaskId::kPutBlockBack: return "put_block_back";
    case TaskId::kRearrangeBlock: return "rearrange_block";
  }
  return "?";
}

inline TaskId task_from_name(const std::string& s) {
  if (s == "reopen_drawer") return TaskId::kReopenDrawer;
  if (s == "put_block_back") return TaskId::kPutBlockBack;
  if (s == "rearrange_block") return TaskId::kRearrangeBlock;
  throw ConfigError("unknown task: " + s);
}

inline int task_variations(TaskId t) {
  switch (t) {
    case TaskId::kReopenDrawer: return 3;
    case TaskId::kPutBlockBack: return 4;
    case TaskId::kRearrangeBlock: return 2;
  }
  return 0;
}

// Keyframe counts of the scripted demonstrations. The reopen_drawer script
// includes the extra approach waypoint for the closing motion; the original
// 8-keyframe script stays available behind a flag.
inline int task_keyframes(TaskId t, bool legacy_reopen = false) {
  switch (t) {
    case TaskId::kReopenDrawer: return legacy_reopen ? 8 : 9;
    case TaskId::kPutBlockBack: return 11;
    case TaskId::kRearrangeBlock: return 10;
  }
  return 0;
}

// Fixed per-task instruction; deliberately carries no variation content.
inline const char* task_instruction(TaskId t) {
  switch (t) {
    case TaskId::kReopenDrawer:
      return "close the open drawer, press the button, then reopen the same drawer";
    case TaskId::kPutBlockBack:
      return "move the block to the centre, press the button, then put the block back";
    case TaskId::kRearrangeBlock:
      return "put the centre block on the empty patch, press the button, then clear the other patch";
  }
  return "";
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

struct ObjPose {
  Vec3 pos;
  double yaw = 0;
  bool operator==(const ObjPose&) const = default;
};

struct GripperState {
  Vec3 pos;
  bool closed = false;
  std::string holding;  // empty when not holding
  bool operator==(const GripperState&) const = default;
};

struct SceneState {
  TaskId task = TaskId::kReopenDrawer;
  int variation = 0;
  uint64_t seed = 0;
  std::map<std::string, ObjPose> objects;
  std::array<bool, 3> drawer_open{false, false, false};  // slot 0 = top
  bool button_pressed = false;
  GripperState gripper;
  int phase_counter = 0;
  bool operator==(const SceneState&) const = default;
};

struct ActionKeyframe {
  Vec3 translation;
  Quat rotation = Quat::identity();
  bool gripper_open = true;
  bool collision_allowed = false;

  void validate() const {
    MVMEM_CHECK(std::fabs(rotation.norm() - 1.0) <= 1e-6, ContractError,
                "keyframe quaternion not unit");
    MVMEM_CHECK(rotation.w >= 0.0, ContractError, "keyframe quaternion not canonical");
    Vec3 c = clamp01(translation);
    MVMEM_CHECK((c - translation).norm() == 0.0, ContractError, "keyframe outside workspace");
  }
};

struct TransitionLog {
  bool clamped = false;
  Vec3 requested;
};

// ---------------------------------------------------------------------------
// Layout constants (sim units, workspace = unit cube)
// ---------------------------------------------------------------------------

namespace geom {
inline constexpr double kTableZ = 0.10;
inline constexpr double kTableMin = 0.05, kTableMax = 0.95;
inline constexpr double kPatchHalf = 0.035, kPatchH = 0.004;
inline constexpr double kBlockHalf = 0.025;
inline constexpr double kButtonHalf = 0.035, kButtonH = 0.03, kButtonHPressed = 0.012;
inline constexpr double kGraspEps = 0.03;    // attach / anchor radius
inline constexpr double kSuccessRadius = 0.04;
inline constexpr double kJitter = 0.02;      // nuisance placement noise bound
inline constexpr double kHoverZ = 0.23;
inline constexpr double kCabinetHalfW = 0.15, kCabinetDepth = 0.20;
inline constexpr double kCabinetFrontY = 0.68;  // closed drawer front plane
inline constexpr double kOpenDepth = 0.12;
inline constexpr double kSlotPitch = 0.12;

inline double patch_center_z() { return kTableZ + kPatchH / 2; }
inline double block_rest_z(bool on_patch) {
  return kTableZ + (on_patch ? kPatchH : 0.0) + kBlockHalf;
}
inline double slot_z(int slot) { return 0.40 - kSlotPitch * slot; }  // slot 0 = top

inline Vec3 gripper_home() { return {0.5, 0.40, 0.50}; }

inline Vec3 button_top(const SceneState& s) {
  const auto& b = s.objects.at("button");
  return {b.pos.x, b.pos.y, kTableZ + (s.button_pressed ? kButtonHPressed : kButtonH)};
}

// Handle anchor points for a drawer slot; the grasp point sits slightly in
// front of the drawer face.
inline Vec3 handle_closed_anchor(const SceneState& s, int slot) {
  double cx = s.objects.at("cabinet").pos.x;
  return {cx, kCabinetFrontY - 0.02, slot_z(slot)};
}
inline Vec3 handle_open_anchor(const SceneState& s, int slot) {
  double cx = s.objects.at("cabinet").pos.x;
  return {cx, kCabinetFrontY - kOpenDepth - 0.02, slot_z(slot)};
}

// Put-block-back patch grid: four corners around the workspace centre.
inline Vec3 put_patch_nominal(int i) {
  double sx = (i % 2 == 0) ? -1.0 : 1.0;
  double sy = (i / 2 == 0) ? -1.0 : 1.0;
  return {0.5 + 0.17 * sx, 0.5 + 0.17 * sy, patch_center_z()};
}

inline Vec3 rearrange_patch_nominal(int i) {
  return {i == 0 ? 0.30 : 0.70, 0.5, patch_center_z()};
}
}  // namespace geom

// ---------------------------------------------------------------------------
// reset
// ---------------------------------------------------------------------------

// Deterministic initial state. The seed drives only nuisance jitter, drawn in
// a fixed order independent of the variation so that matched seeds produce
// identical nuisance layouts across variations.
inline SceneState reset(TaskId task, int variation, uint64_t seed) {
  MVMEM_CHECK(variation >= 0 && variation < task_variations(task), RangeError,
              std::string("variation out of range for ") + task_name(task));
  Rng rng(seed_combine(std::string(task_name(task)) + "/reset", seed));
  auto jit = [&rng]() { return rng.uniform(-geom::kJitter, geom::kJitter); };

  SceneState s;
  s.task = task;
  s.variation = variation;
  s.seed = seed;
  s.gripper.pos = geom::gripper_home();
  s.gripper.closed = false;

  using namespace geom;
  switch (task) {
    case TaskId::kReopenDrawer: {
      double jc = jit();
      double jbx = jit(), jby = jit();
      s.objects["cabinet"] = {{0.5 + jc, kCabinetFrontY + kCabinetDepth / 2, kTableZ}, 0};
      s.objects["button"] = {{0.5 + jbx, 0.30 + jby, kTableZ}, 0};
      s.drawer_open[variation] = true;
      break;
    }
    case TaskId::kPutBlockBack: {
      std::array<Vec3, 4> patches;
      for (int i = 0; i < 4; ++i) {
        Vec3 p = put_patch_nominal(i);
        patches[i] = {p.x + jit(), p.y + jit(), p.z};
      }
      double jbx = jit(), jby = jit();
      for (int i = 0; i < 4; ++i) s.objects["patch" + std::to_string(i)] = {patches[i], 0};
      s.objects["button"] = {{0.85 + jbx, 0.5 + jby, kTableZ}, 0};
      // block exactly on its initial patch centre
      s.objects["block"] = {{patches[variation].x, patches[variation].y, block_rest_z(true)}, 0};
      break;
    }
    case TaskId::kRearrangeBlock: {
      std::array<Vec3, 2> patches;
      for (int i = 0; i < 2; ++i) {
        Vec3 p = rearrange_patch_nominal(i);
        patches[i] = {p.x + jit(), p.y + jit(), p.z};
      }
      double jbx = jit(), jby = jit();
      double jcx = jit(), jcy = jit();
      for (int i = 0; i < 2; ++i) s.objects["patch" + std::to_string(i)] = {patches[i], 0};
      s.objects["button"] = {{0.5 + jbx, 0.82 + jby, kTableZ}, 0};
      // block_a rests exactly on patch <variation>; block_b near the centre
      s.objects["block_a"] = {{patches[variation].x, patches[variation].y, block_rest_z(true)}, 0};
      s.objects["block_b"] = {{0.5 + jcx, 0.5 + jcy, block_rest_z(false)}, 0};
      break;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// transition
// ---------------------------------------------------------------------------
//
// Kinematic rules: the gripper teleports to the keyframe pose.
//  - Pressing: moving within eps of the button top while descending latches
//    button_pressed; in reopen_drawer this also closes every drawer.
//  - Drawers: moving from one handle anchor to the other within eps pushes a
//    drawer closed (any gripper state) or, with the gripper held closed,
//    pulls it open.
//  - Blocks: an open->closed transition within eps of a block centre attaches
//    it (snapping to the gripper); closed->open detaches at the current
//    position. A held block follows the gripper.
inline SceneState transition(const SceneState& s, const ActionKeyframe& kf,
                             TransitionLog* log = nullptr) {
  using namespace geom;
  SceneState n = s;
  Vec3 tgt = clamp01(kf.translation);
  if (log) {
    log->requested = kf.translation;
    log->clamped = !(tgt == kf.translation);
  }
  const Vec3 prev = s.gripper.pos;
  const bool was_closed = s.gripper.closed;
  const bool now_closed = !kf.gripper_open;

  // button
  if (!n.button_pressed && tgt.z < prev.z - 1e-12 && tgt.dist(button_top(s)) <= kGraspEps) {
    n.button_pressed = true;
    if (s.task == TaskId::kReopenDrawer) n.drawer_open = {false, false, false};
  }

  // drawers
  if (s.task == TaskId::kReopenDrawer) {
    for (int slot = 0; slot < 3; ++slot) {
      Vec3 ca = handle_closed_anchor(s, slot);
      Vec3 oa = handle_open_anchor(s, slot);
      if (n.drawer_open[slot] && prev.dist(oa) <= kGraspEps && tgt.dist(ca) <= kGraspEps) {
        n.drawer_open[slot] = false;
      } else if (!n.drawer_open[slot] && was_closed && now_closed && prev.dist(ca) <= kGraspEps &&
                 tgt.dist(oa) <= kGraspEps) {
        n.drawer_open[slot] = true;
      }
    }
  }

  // held block follows (including the release step)
  if (was_closed && !s.gripper.holding.empty()) n.objects[s.gripper.holding].pos = tgt;

  if (!was_closed && now_closed) {
    // attach the nearest block whose centre is within the grasp radius
    std::string best;
    double best_d = kGraspEps;
    for (const auto& [name, obj] : n.objects) {
      if (name.rfind("block", 0) != 0) continue;
      double d = tgt.dist(obj.pos);
      if (d <= best_d) {
        best_d = d;
        best = name;
      }
    }
    if (!best.empty()) {
      n.gripper.holding = best;
      n.objects[best].pos = tgt;
    }
  } else if (was_closed && !now_closed) {
    n.gripper.holding.clear();
  }

  n.gripper.pos = tgt;
  n.gripper.closed = now_closed;
  if (!n.gripper.closed) n.gripper.holding.clear();
  n.phase_counter = s.phase_counter + 1;
  return n;
}

// ---------------------------------------------------------------------------
// success
// ---------------------------------------------------------------------------

// Target pose the moved block must reach, per task.
inline Vec3 success_target(const SceneState& s) {
  using namespace geom;
  switch (s.task) {
    case TaskId::kPutBlockBack: {
      const Vec3 p = s.objects.at("patch" + std::to_string(s.variation)).pos;
      return {p.x, p.y, block_rest_z(true)};
    }
    case TaskId::kRearrangeBlock:
      return {0.5, 0.5, block_rest_z(false)};
    default:
      return {};
  }
}

inline bool check_success(TaskId task, const SceneState& s) {
  MVMEM_CHECK(s.task == task, ContractError, "state does not belong to task");
  if (!s.button_pressed) return false;
  switch (task) {
    case TaskId::kReopenDrawer:
      return s.drawer_open[s.variation];
    case TaskId::kPutBlockBack:
      return s.objects.at("block").pos.dist(success_target(s)) <= geom::kSuccessRadius;
    case TaskId::kRearrangeBlock:
      return s.objects.at("block_a").pos.dist(success_target(s)) <= geom::kSuccessRadius;
  }
  return false;
}

}  // namespace mvmem::sim
