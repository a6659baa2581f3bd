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
#include <limits>
#include <vector>

#include "mvmem/sim/scene.hpp"

namespace mvmem::view {

struct EmptyRenderError : std::runtime_error {
  explicit EmptyRenderError(const std::string& m) : std::runtime_error("empty render: " + m) {}
};
struct DegenerateInputError : std::runtime_error {
  explicit DegenerateInputError(const std::string& m)
      : std::runtime_error("degenerate input: " + m) {}
};

struct Bounds {
  Vec3 center{0.5, 0.5, 0.5};
  double extent = 1.0;  // cube side length
};

inline Bounds workspace_bounds() { return {{0.5, 0.5, 0.5}, 1.0}; }

// Axis-orientation table (rows grow downward, cols grow rightward):
//   view   looks along   col axis   row axis   nearest surface
//   top    -z            +x         +y         largest z
//   front  -y            +x         -z         largest y
//   right  -x            +y         -z         largest x
enum class ViewAxis { kTop = 0, kFront = 1, kRight = 2 };
inline constexpr int kNumViews = 3;

struct ViewSpec {
  ViewAxis axis = ViewAxis::kTop;
  int image_size = 64;
  Bounds bounds;

  void validate() const {
    MVMEM_CHECK(bounds.extent > 0, ContractError, "view extent must be positive");
    MVMEM_CHECK(image_size >= 16 && (image_size & (image_size - 1)) == 0, ContractError,
                "image_size must be a power of two >= 16");
  }
};

struct Pixel {
  int row = 0, col = 0;
  bool operator==(const Pixel&) const = default;
};

// Signed distance along the view direction, normalized by extent; smaller is
// nearer to the camera.
inline double view_depth(const Vec3& p, const ViewSpec& v) {
  Vec3 d = p - v.bounds.center;
  switch (v.axis) {
    case ViewAxis::kTop: return -d.z / v.bounds.extent;
    case ViewAxis::kFront: return -d.y / v.bounds.extent;
    case ViewAxis::kRight: return -d.x / v.bounds.extent;
  }
  return 0;
}

namespace detail {
inline int to_index(double q, int size) {
  int i = int(std::floor(q * size));
  return i < 0 ? 0 : (i >= size ? size - 1 : i);
}
}  // namespace detail

// In-plane normalized coordinates in [0,1]: (col_q, row_q).
inline std::pair<double, double> view_plane(const Vec3& p, const ViewSpec& v) {
  Vec3 d = p - v.bounds.center;
  double e = v.bounds.extent;
  switch (v.axis) {
    case ViewAxis::kTop: return {d.x / e + 0.5, d.y / e + 0.5};
    case ViewAxis::kFront: return {d.x / e + 0.5, 0.5 - d.z / e};
    case ViewAxis::kRight: return {d.y / e + 0.5, 0.5 - d.z / e};
  }
  return {0, 0};
}

inline bool in_bounds(const Vec3& p, const Bounds& b, double tol = 1e-12) {
  return (p - b.center).max_abs() <= b.extent / 2 + tol;
}

inline Pixel project_point(const Vec3& p, const ViewSpec& v) {
  MVMEM_CHECK(in_bounds(p, v.bounds), RangeError, "point outside view bounds");
  auto [cq, rq] = view_plane(p, v);
  return {detail::to_index(rq, v.image_size), detail::to_index(cq, v.image_size)};
}

// ---------------------------------------------------------------------------
// Point cloud
// ---------------------------------------------------------------------------

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> colors;

  void add(const Vec3& p, const Vec3& c) {
    points.push_back(p);
    colors.push_back(c);
  }
  size_t size() const { return points.size(); }
};

namespace detail {

inline Vec3 rot_yaw(const Vec3& v, double yaw) {
  double c = std::cos(yaw), s = std::sin(yaw);
  return {v.x * c - v.y * s, v.x * s + v.y * c, v.z};
}

// Samples all six faces of a yaw-rotated box on a regular grid.
inline void emit_box(PointCloud& pc, const Vec3& center, const Vec3& half, double yaw,
                     const Vec3& color, double spacing) {
  auto steps = [spacing](double len) { return std::max(1, int(std::ceil(len / spacing))) + 1; };
  int nx = steps(2 * half.x), ny = steps(2 * half.y), nz = steps(2 * half.z);
  auto lerp = [](double a, double b, int i, int n) {
    return n == 1 ? a : a + (b - a) * double(i) / double(n - 1);
  };
  auto put = [&](double lx, double ly, double lz) {
    pc.add(center + rot_yaw({lx, ly, lz}, yaw), color);
  };
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      double lx = lerp(-half.x, half.x, i, nx), ly = lerp(-half.y, half.y, j, ny);
      put(lx, ly, half.z);
      put(lx, ly, -half.z);
    }
  for (int i = 0; i < nx; ++i)
    for (int k = 0; k < nz; ++k) {
      double lx = lerp(-half.x, half.x, i, nx), lz = lerp(-half.z, half.z, k, nz);
      put(lx, half.y, lz);
      put(lx, -half.y, lz);
    }
  for (int j = 0; j < ny; ++j)
    for (int k = 0; k < nz; ++k) {
      double ly = lerp(-half.y, half.y, j, ny), lz = lerp(-half.z, half.z, k, nz);
      put(half.x, ly, lz);
      put(-half.x, ly, lz);
    }
}

}  // namespace detail

// Deterministic scene geometry. Emission order is fixed (table, objects in
// name order, gripper) so that depth ties resolve identically across states
// with matching geometry.
inline PointCloud scene_to_cloud(const sim::SceneState& s, double spacing = 0.01) {
  using namespace sim::geom;
  using detail::emit_box;
  PointCloud pc;
  const Vec3 kTableColor{0.58, 0.58, 0.60};
  const Vec3 kPatchColor{0.85, 0.08, 0.08};
  const Vec3 kBlockColor{0.15, 0.35, 0.85};
  const Vec3 kCabinetColor{0.48, 0.33, 0.18};
  const Vec3 kDrawerColor{0.70, 0.52, 0.30};
  const Vec3 kHandleColor{0.12, 0.12, 0.12};
  const Vec3 kGripperColor{0.10, 0.85, 0.90};
  const Vec3 kWristColor{0.20, 0.30, 0.35};

  emit_box(pc, {0.5, 0.5, kTableZ - 0.01}, {0.45, 0.45, 0.01}, 0, kTableColor, spacing);

  for (const auto& [name, obj] : s.objects) {
    if (name.rfind("block", 0) == 0) {
      emit_box(pc, obj.pos, {kBlockHalf, kBlockHalf, kBlockHalf}, obj.yaw, kBlockColor, spacing);
    } else if (name.rfind("patch", 0) == 0) {
      emit_box(pc, obj.pos, {kPatchHalf, kPatchHalf, kPatchH / 2}, obj.yaw, kPatchColor, spacing);
    } else if (name == "button") {
      double h = s.button_pressed ? kButtonHPressed : kButtonH;
      Vec3 color = s.button_pressed ? Vec3{0.50, 0.33, 0.05} : Vec3{0.95, 0.62, 0.10};
      emit_box(pc, {obj.pos.x, obj.pos.y, kTableZ + h / 2}, {kButtonHalf, kButtonHalf, h / 2},
               obj.yaw, color, spacing);
    } else if (name == "cabinet") {
      double cz0 = kTableZ, cz1 = kTableZ + 0.36;
      Vec3 cc{obj.pos.x, obj.pos.y, (cz0 + cz1) / 2};
      Vec3 ch{kCabinetHalfW, kCabinetDepth / 2, (cz1 - cz0) / 2};
      // shell without the front face
      auto put_face = [&](Vec3 c, Vec3 h) { emit_box(pc, c, h, obj.yaw, kCabinetColor, spacing); };
      put_face({cc.x, cc.y, cz1}, {ch.x, ch.y, 0.002});                    // top
      put_face({cc.x, cc.y + ch.y, cc.z}, {ch.x, 0.002, ch.z});            // back
      put_face({cc.x - ch.x, cc.y, cc.z}, {0.002, ch.y, ch.z});            // left
      put_face({cc.x + ch.x, cc.y, cc.z}, {0.002, ch.y, ch.z});            // right
      for (int slot = 0; slot < 3; ++slot) {
        double ext = s.drawer_open[slot] ? kOpenDepth : 0.0;
        double fy = kCabinetFrontY - ext;
        double sz = slot_z(slot);
        emit_box(pc, {obj.pos.x, fy + 0.01, sz}, {kCabinetHalfW - 0.01, 0.01, 0.052}, obj.yaw,
                 kDrawerColor, spacing);
        emit_box(pc, {obj.pos.x, fy - 0.012, sz}, {0.012, 0.012, 0.012}, obj.yaw, kHandleColor,
                 spacing);
      }
    }
  }

  // gripper: wrist block plus two fingers whose separation shows open/closed
  {
    const Vec3 g = s.gripper.pos;
    double sep = s.gripper.closed ? 0.031 : 0.045;
    emit_box(pc, {g.x, g.y, g.z + 0.035}, {0.02, 0.009, 0.012}, 0, kWristColor, spacing);
    emit_box(pc, {g.x - sep, g.y, g.z}, {0.006, 0.006, 0.0175}, 0, kGripperColor, spacing);
    emit_box(pc, {g.x + sep, g.y, g.z}, {0.006, 0.006, 0.0175}, 0, kGripperColor, spacing);
  }
  return pc;
}

// ---------------------------------------------------------------------------
// VirtualViews
// ---------------------------------------------------------------------------

inline constexpr int kNumChannels = 7;  // R, G, B, depth, wx, wy, wz

struct VirtualViews {
  int image_size = 0;
  Bounds bounds;
  // channels[view][c], row-major image_size x image_size
  std::array<std::array<std::vector<double>, kNumChannels>, kNumViews> channels;
  std::array<std::vector<double>, kNumViews> occupancy;  // mask, metadata

  double at(int v, int c, int row, int col) const {
    return channels[v][c][row * image_size + col];
  }

  double max_abs_diff(const VirtualViews& o) const {
    double m = 0;
    for (int v = 0; v < kNumViews; ++v)
      for (int c = 0; c < kNumChannels; ++c)
        for (size_t i = 0; i < channels[v][c].size(); ++i)
          m = std::max(m, std::fabs(channels[v][c][i] - o.channels[v][c][i]));
    return m;
  }

  // Flattens to [3, 7, S, S] in the model scalar type.
  template <class R>
  std::vector<R> to_model() const {
    std::vector<R> out;
    out.reserve(size_t(kNumViews) * kNumChannels * image_size * image_size);
    for (int v = 0; v < kNumViews; ++v)
      for (int c = 0; c < kNumChannels; ++c)
        for (double x : channels[v][c]) out.push_back(R(x));
    return out;
  }
};

inline ViewSpec view_spec(ViewAxis axis, const Bounds& b, int image_size) {
  ViewSpec v{axis, image_size, b};
  v.validate();
  return v;
}

// Orthographic z-buffer splat; nearest surface wins, depth ties keep the
// lowest point index.
inline VirtualViews render_views(const PointCloud& pc, const Bounds& b, int image_size) {
  VirtualViews out;
  out.image_size = image_size;
  out.bounds = b;
  int S = image_size;
  size_t inside = 0;
  std::array<std::vector<double>, kNumViews> zbuf;
  std::array<std::vector<int>, kNumViews> winner;
  for (int v = 0; v < kNumViews; ++v) {
    zbuf[v].assign(size_t(S) * S, std::numeric_limits<double>::infinity());
    winner[v].assign(size_t(S) * S, -1);
    for (int c = 0; c < kNumChannels; ++c) out.channels[v][c].assign(size_t(S) * S, 0.0);
    out.occupancy[v].assign(size_t(S) * S, 0.0);
  }
  for (size_t i = 0; i < pc.size(); ++i) {
    const Vec3& p = pc.points[i];
    if (!in_bounds(p, b)) continue;
    ++inside;
    for (int v = 0; v < kNumViews; ++v) {
      ViewSpec spec{ViewAxis(v), S, b};
      auto [cq, rq] = view_plane(p, spec);
      int row = detail::to_index(rq, S), col = detail::to_index(cq, S);
      double d = view_depth(p, spec);
      size_t idx = size_t(row) * S + col;
      if (d < zbuf[v][idx]) {
        zbuf[v][idx] = d;
        winner[v][idx] = int(i);
      }
    }
  }
  MVMEM_CHECK(inside > 0, EmptyRenderError, "no geometry inside bounds");
  for (int v = 0; v < kNumViews; ++v)
    for (size_t idx = 0; idx < winner[v].size(); ++idx) {
      int w = winner[v][idx];
      if (w < 0) continue;
      const Vec3& p = pc.points[w];
      const Vec3& c = pc.colors[w];
      out.channels[v][0][idx] = c.x;
      out.channels[v][1][idx] = c.y;
      out.channels[v][2][idx] = c.z;
      out.channels[v][3][idx] = zbuf[v][idx];
      out.channels[v][4][idx] = p.x;
      out.channels[v][5][idx] = p.y;
      out.channels[v][6][idx] = p.z;
      out.occupancy[v][idx] = 1.0;
    }
  return out;
}

inline VirtualViews render_views(const sim::SceneState& s, const Bounds& b, int image_size,
                                 double spacing = 0.01) {
  return render_views(scene_to_cloud(s, spacing), b, image_size);
}

inline double default_zoom_extent(const Bounds& workspace) { return workspace.extent / 4.0; }

// Re-render around a region of interest.
inline VirtualViews zoom_views(const sim::SceneState& s, const Vec3& center, double zoom_extent,
                               int image_size, double spacing = 0.01) {
  MVMEM_CHECK(in_bounds(center, workspace_bounds()), RangeError, "zoom center outside workspace");
  return render_views(scene_to_cloud(s, spacing), Bounds{center, zoom_extent}, image_size);
}

}  // namespace mvmem::view
