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

#include <functional>
#include <vector>

#include "mvmem/common.hpp"

namespace mvmem::test {

inline std::vector<double> random_vec(size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

// Central-difference gradient check. `value` recomputes the scalar output
// from the (mutable) input vectors; `analytic` holds d(out)/d(input[k][i])
// from one backward pass. Returns the fraction of sampled coordinates whose
// relative error is within `tol`.
struct GradCheck {
  std::vector<std::vector<double>*> inputs;
  std::function<double()> value;
  std::vector<const std::vector<double>*> analytic;

  double pass_fraction(Rng& rng, int samples, double tol = 1e-4, double h = 1e-5) {
    int ok = 0, total = 0;
    for (int s = 0; s < samples; ++s) {
      int k = rng.index(int(inputs.size()));
      auto& vec = *inputs[k];
      long i = rng.index(int(vec.size()));
      double orig = vec[i];
      vec[i] = orig + h;
      double fp = value();
      vec[i] = orig - h;
      double fm = value();
      vec[i] = orig;
      double fd = (fp - fm) / (2 * h);
      double an = (*analytic[k])[i];
      double denom = std::max({1e-6, std::fabs(fd), std::fabs(an)});
      if (std::fabs(fd - an) / denom <= tol) ++ok;
      ++total;
    }
    return double(ok) / double(total);
  }
};

}  // namespace mvmem::test
