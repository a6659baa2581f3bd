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

#include <gtest/gtest.h>

#include "mvmem/optim.hpp"
#include "support.hpp"

using namespace mvmem;
using nn::Tape;
using test::GradCheck;
using test::random_vec;

namespace {

// Builds a GradCheck for a graph closure: the closure receives the tape and
// one leaf per input vector (requires_grad on) and returns the scalar root.
template <class Build>
GradCheck make_check(std::vector<std::vector<double>>& inputs,
                     std::vector<nn::Shape> shapes, Build build,
                     std::vector<std::vector<double>>& grad_out) {
  GradCheck gc;
  auto value = [&inputs, shapes, build]() {
    Tape<double> tp;
    std::vector<Tape<double>::TP> leaves;
    for (size_t i = 0; i < inputs.size(); ++i)
      leaves.push_back(tp.constant(inputs[i], shapes[i], true));
    return build(tp, leaves)->val[0];
  };
  // analytic pass
  {
    Tape<double> tp;
    std::vector<Tape<double>::TP> leaves;
    for (size_t i = 0; i < inputs.size(); ++i)
      leaves.push_back(tp.constant(inputs[i], shapes[i], true));
    auto root = build(tp, leaves);
    tp.backward(root);
    grad_out.clear();
    for (auto* l : leaves) {
      tp.gref(l);
      grad_out.emplace_back(l->grad.data(), l->grad.data() + l->size);
    }
  }
  for (auto& v : inputs) gc.inputs.push_back(&v);
  gc.value = value;
  for (auto& g : grad_out) gc.analytic.push_back(&g);
  return gc;
}

}  // namespace

TEST(Tensor, AddMulValues) {
  Tape<double> tp;
  auto a = tp.constant({1, 2, 3}, {3});
  auto b = tp.constant({4, 5, 6}, {3});
  auto s = tp.add(a, b);
  auto m = tp.mul(a, b);
  EXPECT_DOUBLE_EQ(s->val[1], 7);
  EXPECT_DOUBLE_EQ(m->val[2], 18);
}

TEST(Tensor, ElementwiseGrads) {
  Rng rng(1);
  std::vector<std::vector<double>> in{random_vec(12, rng), random_vec(12, rng)};
  std::vector<std::vector<double>> grads;
  auto gc = make_check(
      in, {{12}, {12}},
      [](Tape<double>& tp, std::vector<Tape<double>::TP> l) {
        return tp.sum_all(tp.mul(tp.gelu(l[0]), tp.add(l[1], tp.relu(l[0]))));
      },
      grads);
  EXPECT_GE(gc.pass_fraction(rng, 60), 0.95);
}

TEST(Tensor, LinearMatmulGrads) {
  Rng rng(2);
  std::vector<std::vector<double>> in{random_vec(4 * 5, rng), random_vec(3 * 5, rng),
                                      random_vec(3, rng)};
  std::vector<std::vector<double>> grads;
  auto gc = make_check(
      in, {{4, 5}, {3, 5}, {3}},
      [](Tape<double>& tp, std::vector<Tape<double>::TP> l) {
        auto y = tp.linear(l[0], l[1], l[2], 5, 3);
        return tp.mean_all(tp.mul(y, y));
      },
      grads);
  EXPECT_GE(gc.pass_fraction(rng, 80), 0.95);
}

TEST(Tensor, LayerNormGrads) {
  Rng rng(3);
  std::vector<std::vector<double>> in{random_vec(6 * 8, rng), random_vec(8, rng, 0.5),
                                      random_vec(8, rng, 0.5)};
  for (auto& g : in[1]) g += 1.0;
  std::vector<std::vector<double>> grads;
  auto gc = make_check(
      in, {{6, 8}, {8}, {8}},
      [](Tape<double>& tp, std::vector<Tape<double>::TP> l) {
        auto y = tp.layernorm_rows(l[0], l[1], l[2], 8);
        return tp.sum_all(tp.gelu(y));
      },
      grads);
  EXPECT_GE(gc.pass_fraction(rng, 90), 0.95);
}

TEST(Tensor, LayerNormMoments) {
  Rng rng(4);
  Tape<double> tp;
  auto x = tp.constant(random_vec(5 * 16, rng, 3.0), {5, 16});
  auto g = tp.constant(std::vector<double>(16, 1.0), {16});
  auto b = tp.constant(std::vector<double>(16, 0.0), {16});
  auto y = tp.layernorm_rows(x, g, b, 16);
  for (int i = 0; i < 5; ++i) {
    double mean = 0, var = 0;
    for (int j = 0; j < 16; ++j) mean += y->val[i * 16 + j];
    mean /= 16;
    for (int j = 0; j < 16; ++j) var += std::pow(y->val[i * 16 + j] - mean, 2);
    var /= 16;
    EXPECT_LE(std::fabs(mean), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Tensor, SoftmaxRows) {
  Tape<double> tp;
  auto x = tp.constant({1, 1, 1, 1, 0, 0, 0, 20}, {2, 4});
  auto p = tp.softmax_rows(x, 4);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(p->val[j], 0.25, 1e-12);
  EXPECT_GT(p->val[7], 0.999);
}

TEST(Tensor, SoftmaxGrads) {
  Rng rng(5);
  std::vector<std::vector<double>> in{random_vec(3 * 7, rng)};
  std::vector<std::vector<double>> grads;
  std::vector<double> w = random_vec(21, rng);
  auto gc = make_check(
      in, {{3, 7}},
      [w](Tape<double>& tp, std::vector<Tape<double>::TP> l) {
        auto p = tp.softmax_rows(l[0], 7);
        return tp.sum_all(tp.mul(p, tp.constant(w, {3, 7})));
      },
      grads);
  EXPECT_GE(gc.pass_fraction(rng, 70), 0.95);
}

TEST(Tensor, Conv2dGrads) {
  Rng rng(6);
  // two images, two input channels, 5x5, 3 output channels, stride 2
  std::vector<std::vector<double>> in{random_vec(2 * 2 * 5 * 5, rng),
                                      random_vec(3 * 2 * 3 * 3, rng), random_vec(3, rng)};
  std::vector<std::vector<double>> grads;
  auto gc = make_check(
      in, {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}},
      [](Tape<double>& tp, std::vector<Tape<double>::TP> l) {
        auto y = tp.conv2d(l[0], l[1], l[2], 2, 2, 5, 5, 3, 3, 3, 2, 1);
        return tp.sum_all(tp.gelu(y));
      },
      grads);
  EXPECT_GE(gc.pass_fraction(rng, 120), 0.95);
}

TEST(Tensor, Conv2dValueAgainstLoops) {
  Rng rng(7);
  int C = 2, H = 4, W = 4, O = 2, k = 3, stride = 1, pad = 1;
  auto x = random_vec(C * H * W, rng);
  auto w = random_vec(O * C * k * k, rng);
  auto b = random_vec(O, rng);
  Tape<double> tp;
  auto y = tp.conv2d(tp.constant(x, {1, C, H, W}), tp.constant(w, {O, C, k, k}),
                     tp.constant(b, {O}), 1, C, H, W, O, k, k, stride, pad);
  for (int o = 0; o < O; ++o)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        double acc = b[o];
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              int iy = i + ky - pad, ix = j + kx - pad;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += x[(c * H + iy) * W + ix] * w[((o * C + c) * k + ky) * k + kx];
            }
        EXPECT_NEAR(y->val[(o * H + i) * W + j], acc, 1e-10);
      }
}

TEST(Tensor, MhaGrads) {
  Rng rng(8);
  int G = 2, n = 3, m = 4, D = 8, heads = 2;
  std::vector<std::vector<double>> in{random_vec(G * n * D, rng), random_vec(G * m * D, rng),
                                      random_vec(G * m * D, rng)};
  std::vector<std::vector<double>> grads;
  std::vector<double> w = random_vec(size_t(G) * n * D, rng);
  auto gc = make_check(
      in, {{G * n, D}, {G * m, D}, {G * m, D}},
      [=](Tape<double>& tp, std::vector<Tape<double>::TP> l) {
        auto o = tp.mha(l[0], l[1], l[2], G, n, m, D, heads);
        return tp.sum_all(tp.mul(o, tp.constant(w, {G * n, D})));
      },
      grads);
  EXPECT_GE(gc.pass_fraction(rng, 150), 0.95);
}

TEST(Tensor, RopeNormPreservationAndShift) {
  Rng rng(9);
  int D = 32, dh = 16;
  auto x = random_vec(D, rng);
  auto rope_at = [&](const std::vector<double>& v, int r, int c) {
    Tape<double> tp;
    auto n = tp.rope2d(tp.constant(v, {1, D}), D, dh, {r}, {c}, 100.0);
    return std::vector<double>(n->val.data(), n->val.data() + D);
  };
  auto y = rope_at(x, 3, 5);
  double nx = 0, ny = 0;
  for (int i = 0; i < D; ++i) {
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  EXPECT_NEAR(std::sqrt(nx), std::sqrt(ny), 1e-6);

  // common-shift invariance of q.k logits
  auto q = random_vec(D, rng), k = random_vec(D, rng);
  auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (int i = 0; i < D; ++i) s += a[i] * b[i];
    return s;
  };
  double l1 = dot(rope_at(q, 1, 2), rope_at(k, 4, 6));
  double l2 = dot(rope_at(q, 1 + 3, 2 + 1), rope_at(k, 4 + 3, 6 + 1));
  EXPECT_NEAR(l1, l2, 1e-5);
}

TEST(Tensor, RopeGrads) {
  Rng rng(10);
  int D = 16, dh = 8;
  std::vector<std::vector<double>> in{random_vec(3 * D, rng)};
  std::vector<std::vector<double>> grads;
  std::vector<double> w = random_vec(3 * D, rng);
  auto gc = make_check(
      in, {{3, D}},
      [=](Tape<double>& tp, std::vector<Tape<double>::TP> l) {
        auto y = tp.rope2d(l[0], D, dh, {0, 1, 2}, {2, 0, 1}, 100.0);
        return tp.sum_all(tp.mul(y, tp.constant(w, {3, D})));
      },
      grads);
  EXPECT_GE(gc.pass_fraction(rng, 60), 0.95);
}

TEST(Tensor, ReindexGatherSliceConcat) {
  Rng rng(11);
  std::vector<std::vector<double>> in{random_vec(4 * 3, rng)};
  std::vector<std::vector<double>> grads;
  auto idx = std::make_shared<std::vector<int>>(std::vector<int>{5, 0, -1, 3, 2, 2});
  auto gc = make_check(
      in, {{4, 3}},
      [idx](Tape<double>& tp, std::vector<Tape<double>::TP> l) {
        auto r = tp.reindex(l[0], idx, {2, 3});
        auto g = tp.gather_rows(l[0], 3, {2, 0, 2});
        auto s = tp.slice_rows(l[0], 3, 1, 2);
        auto cat = tp.concat_rows({r, g, s}, 3);
        return tp.sum_all(tp.gelu(cat));
      },
      grads);
  EXPECT_GE(gc.pass_fraction(rng, 50), 0.95);
}

TEST(Tensor, CeRowsSoft) {
  Tape<double> tp;
  // uniform logits over N entries: ce with any target distribution = ln N
  int N = 12288;
  auto x = tp.constant(std::vector<double>(N, 0.25), {1, N}, true);
  auto ce = tp.ce_rows_soft(x, N, {{{5, 1.0 / 3}, {100, 1.0 / 3}, {7000, 1.0 / 3}}});
  EXPECT_NEAR(ce->val[0], std::log(double(N)), 1e-4);

  // peaked logit recovers the target
  std::vector<double> v(100, 0.0);
  v[17] = 40.0;
  auto x2 = tp.constant(v, {1, 100});
  auto ce2 = tp.ce_rows_soft(x2, 100, {{{17, 1.0}}});
  EXPECT_LE(ce2->val[0], 1e-6);
}

TEST(Tensor, CeGrads) {
  Rng rng(12);
  std::vector<std::vector<double>> in{random_vec(2 * 9, rng)};
  std::vector<std::vector<double>> grads;
  auto gc = make_check(
      in, {{2, 9}},
      [](Tape<double>& tp, std::vector<Tape<double>::TP> l) {
        auto ce = tp.ce_rows_soft(l[0], 9, {{{1, 0.5}, {4, 0.5}}, {{0, 1.0}}});
        return tp.mean_all(ce);
      },
      grads);
  EXPECT_GE(gc.pass_fraction(rng, 40), 0.95);
}

TEST(Tensor, BceGrads) {
  Rng rng(13);
  std::vector<std::vector<double>> in{random_vec(6, rng, 2.0)};
  std::vector<std::vector<double>> grads;
  auto gc = make_check(
      in, {{6}},
      [](Tape<double>& tp, std::vector<Tape<double>::TP> l) {
        return tp.mean_all(tp.bce_logits(l[0], {1, 0, 1, 0, 1, 1}));
      },
      grads);
  EXPECT_GE(gc.pass_fraction(rng, 30), 0.95);
}

TEST(Tensor, ConvexCombineGrads) {
  Rng rng(14);
  int N = 1, C = 2, H = 3, W = 3;
  std::vector<std::vector<double>> in{random_vec(N * C * H * W, rng),
                                      random_vec(size_t(N) * H * W * 36, rng)};
  std::vector<std::vector<double>> grads;
  auto gc = make_check(
      in, {{N, C, H, W}, {N * H * W * 4, 9}},
      [=](Tape<double>& tp, std::vector<Tape<double>::TP> l) {
        auto w = tp.softmax_rows(l[1], 9);
        auto y = tp.convex_combine(l[0], w, N, C, H, W);
        return tp.sum_all(tp.gelu(y));
      },
      grads);
  EXPECT_GE(gc.pass_fraction(rng, 120), 0.95);
}

TEST(Tensor, MeanRowsViewBias) {
  Rng rng(15);
  std::vector<std::vector<double>> in{random_vec(4 * 6, rng), random_vec(6, rng)};
  std::vector<std::vector<double>> grads;
  auto gc = make_check(
      in, {{4, 6}, {6}},
      [](Tape<double>& tp, std::vector<Tape<double>::TP> l) {
        auto y = tp.add_bias_rows(l[0], l[1], 6);
        auto m = tp.mean_rows(y, 6);
        auto v = tp.view(m, {6});
        return tp.sum_all(tp.mul(v, v));
      },
      grads);
  EXPECT_GE(gc.pass_fraction(rng, 40), 0.95);
}

TEST(Optimizer, LrSchedule) {
  double peak = 1e-3;
  long warmup = 100, total = 1000;
  EXPECT_DOUBLE_EQ(nn::lr_schedule(0, warmup, total, peak), 0.0);
  EXPECT_DOUBLE_EQ(nn::lr_schedule(warmup, warmup, total, peak), peak);
  EXPECT_LE(nn::lr_schedule(total, warmup, total, peak), 1e-8 * peak);
  // closed form at 100 sampled points
  for (int i = 0; i < 100; ++i) {
    long t = warmup + i * 9;
    double expect = peak * 0.5 * (1 + std::cos(M_PI * double(t - warmup) / double(total - warmup)));
    EXPECT_NEAR(nn::lr_schedule(t, warmup, total, peak), expect, 1e-15);
  }
}

TEST(Optimizer, AdamAndLambConvergeOnQuadratic) {
  for (auto kind : {nn::OptKind::kAdamW, nn::OptKind::kLamb}) {
    Rng rng(16);
    nn::ParamStore<double> ps;
    int w = ps.add("w", {4}, nn::Init::kHeNormal, rng);
    nn::Optimizer<double> opt(ps, kind, 0.0);
    nn::GradBuffer<double> gb(ps);
    std::vector<double> target{1.0, -2.0, 0.5, 3.0};
    const int total = 800;
    for (int step = 0; step < total; ++step) {
      gb.zero();
      Tape<double> tp;
      auto wl = ps.leaf(tp, w);
      auto t = tp.constant(target, {4});
      auto d = tp.sub(wl, t);
      auto loss = tp.sum_all(tp.mul(d, d));
      tp.backward(loss);
      gb.collect(tp);
      opt.step(gb, nn::lr_schedule(step, 20, total, 0.05));
    }
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(ps.at(w).value[i], target[i], 1e-2);
  }
}

TEST(Optimizer, FrozenParamsUntouched) {
  Rng rng(17);
  nn::ParamStore<double> ps;
  int a = ps.add("a", {3}, nn::Init::kHeNormal, rng);
  int b = ps.add("b", {3}, nn::Init::kHeNormal, rng, /*trainable=*/false);
  auto b0 = ps.at(b).value;
  nn::Optimizer<double> opt(ps, nn::OptKind::kAdamW, 0.01);
  nn::GradBuffer<double> gb(ps);
  for (int step = 0; step < 5; ++step) {
    gb.zero();
    Tape<double> tp;
    auto loss = tp.sum_all(tp.mul(ps.leaf(tp, a), ps.leaf(tp, b)));
    tp.backward(loss);
    gb.collect(tp);
    opt.step(gb, 0.1);
  }
  EXPECT_EQ(ps.at(b).value, b0);
}
