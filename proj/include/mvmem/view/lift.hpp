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

#include "mvmem/view/render.hpp"

namespace mvmem::view {

struct LiftResult {
  Vec3 point;
  double score = 0;
  long candidate_index = -1;
};

// Scores a 3-D candidate by summing the three per-view heatmap values at its
// projections. heatmaps: [3][S*S] row-major, nonnegative.
template <class R>
double lift_score(const std::vector<R>& heatmaps, const Bounds& b, int S, const Vec3& p) {
  double score = 0;
  for (int v = 0; v < kNumViews; ++v) {
    ViewSpec spec{ViewAxis(v), S, b};
    auto [cq, rq] = view_plane(p, spec);
    int row = detail::to_index(rq, S), col = detail::to_index(cq, S);
    score += double(heatmaps[(size_t(v) * S + row) * S + col]);
  }
  return score;
}

// Argmax over a regular S^3 lattice of cell centres inside the bounds. Ties
// break to the lowest lattice index, index = (ix*S + iy)*S + iz.
template <class R>
LiftResult lift_heatmaps_to_point(const std::vector<R>& heatmaps, const Bounds& b, int S) {
  MVMEM_CHECK(long(heatmaps.size()) == 3L * S * S, ShapeError, "heatmap size mismatch");
  double total = 0;
  for (R h : heatmaps) {
    MVMEM_CHECK(h >= R(0), ContractError, "heatmaps must be nonnegative");
    total += double(h);
  }
  MVMEM_CHECK(total > 0, DegenerateInputError, "all-zero heatmaps");

  const double e = b.extent, half = e / 2.0;
  auto coord = [&](double c0, int i) { return c0 - half + (i + 0.5) * e / S; };
  // Precompute the three per-axis pixel indices once; the lattice aligns with
  // the pixel grid by construction.
  std::vector<int> col_of(S), rowz_of(S), rowy_of(S);
  for (int i = 0; i < S; ++i) {
    double q = (i + 0.5) / double(S);
    col_of[i] = detail::to_index(q, S);
    rowz_of[i] = detail::to_index(1.0 - q, S);
    rowy_of[i] = detail::to_index(q, S);
  }
  LiftResult best;
  best.score = -1;
  const R* top = heatmaps.data();
  const R* front = heatmaps.data() + size_t(S) * S;
  const R* right = heatmaps.data() + 2 * size_t(S) * S;
  long idx = 0;
  for (int ix = 0; ix < S; ++ix)
    for (int iy = 0; iy < S; ++iy) {
      double base = double(top[size_t(rowy_of[iy]) * S + col_of[ix]]);
      for (int iz = 0; iz < S; ++iz, ++idx) {
        double sc = base + double(front[size_t(rowz_of[iz]) * S + col_of[ix]]) +
                    double(right[size_t(rowz_of[iz]) * S + col_of[iy]]);
        if (sc > best.score) {
          best.score = sc;
          best.candidate_index = idx;
          best.point = {coord(b.center.x, ix), coord(b.center.y, iy), coord(b.center.z, iz)};
        }
      }
    }
  return best;
}

// Argmax over an explicit candidate point set (e.g. the scene point cloud).
template <class R>
LiftResult lift_over_candidates(const std::vector<R>& heatmaps, const Bounds& b, int S,
                                const std::vector<Vec3>& candidates) {
  MVMEM_CHECK(!candidates.empty(), DegenerateInputError, "no candidates");
  double total = 0;
  for (R h : heatmaps) total += double(h);
  MVMEM_CHECK(total > 0, DegenerateInputError, "all-zero heatmaps");
  LiftResult best;
  best.score = -1;
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (!in_bounds(candidates[i], b)) continue;
    double sc = lift_score(heatmaps, b, S, candidates[i]);
    if (sc > best.score) {
      best.score = sc;
      best.candidate_index = long(i);
      best.point = candidates[i];
    }
  }
  MVMEM_CHECK(best.candidate_index >= 0, DegenerateInputError, "no candidate inside bounds");
  return best;
}

}  // namespace mvmem::view
