#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "testutil.hpp"
#include "wsda/autodiff.hpp"

using namespace wsda;
using test::check_gradient;
using test::random_tensor;

namespace {

// Reduce any tensor node to a scalar with fixed coefficients so gradient
// checks exercise non-uniform upstream gradients.
ad::Var spread_sum(ad::Graph& g, ad::Var x) {
  std::vector<double> w(static_cast<size_t>(x->val().size()));
  for (size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  return g.dot_const(x, std::move(w));
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
  RngStream s(11);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = random_tensor({6}, s);
    Tensor b = random_tensor({6}, s);
    for (int i = 0; i < b.size(); ++i) b[i] += (b[i] >= 0 ? 2.0 : -2.0);  // away from zero for div

    auto check_unary = [&](const char* name, const std::function<ad::Var(ad::Graph&, ad::Var)>& f) {
      auto r = check_gradient(a, [&](ad::Graph& g, ad::Var x) { return spread_sum(g, f(g, x)); });
      INFO(name);
      CHECK(r.max_rel_err < 1e-6);
    };
    check_unary("affine", [](ad::Graph& g, ad::Var x) { return g.affine(x, 1.7, -0.3); });
    check_unary("sigmoid", [](ad::Graph& g, ad::Var x) { return g.sigmoid(x); });
    check_unary("abs_sub_const", [](ad::Graph& g, ad::Var x) { return g.abs_sub_const(x, 0.123); });
    check_unary("mul_self", [](ad::Graph& g, ad::Var x) { return g.mul(x, x); });

    auto r_add = check_gradient(a, [&](ad::Graph& g, ad::Var x) {
      return spread_sum(g, g.add(x, g.leaf(b)));
    });
    CHECK(r_add.max_rel_err < 1e-6);
    auto r_div = check_gradient(a, [&](ad::Graph& g, ad::Var x) {
      return spread_sum(g, g.div(x, g.leaf(b)));
    });
    CHECK(r_div.max_rel_err < 1e-6);
    auto r_div2 = check_gradient(b, [&](ad::Graph& g, ad::Var x) {
      return spread_sum(g, g.div(g.leaf(a), x));
    });
    CHECK(r_div2.max_rel_err < 1e-5);

    Tensor pos = random_tensor({6}, s);
    for (int i = 0; i < pos.size(); ++i) pos[i] = std::abs(pos[i]) + 0.5;
    auto r_sqrt = check_gradient(pos, [&](ad::Graph& g, ad::Var x) { return spread_sum(g, g.sqrt(x)); });
    CHECK(r_sqrt.max_rel_err < 1e-6);
  }
}

TEST_CASE("relu gradient away from the kink") {
  RngStream s(12);
  Tensor a = random_tensor({12}, s);
  for (int i = 0; i < a.size(); ++i)
    if (std::abs(a[i]) < 0.05) a[i] = 0.2;  // keep finite differences off the kink
  auto r = check_gradient(a, [&](ad::Graph& g, ad::Var x) { return spread_sum(g, g.relu(x)); });
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("conv2d forward matches a direct computation and gradients check out") {
  RngStream s(13);
  Tensor x = random_tensor({5, 4, 2}, s);
  Tensor w = random_tensor({3, 3, 2, 3}, s, 0.5);
  Tensor b = random_tensor({3}, s, 0.1);

  // stride 1, pad 1: spot-check one output element against the definition
  {
    ad::Graph g;
    ad::Var out = g.conv2d(g.leaf(x), g.leaf(w), g.leaf(b), 1, 1);
    REQUIRE(out->val().dims() == std::vector<int>{5, 4, 3});
    double expect = b[1];
    const int oy = 2, ox = 1, oc = 1;
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        int iy = oy + ky - 1, ix = ox + kx - 1;
        if (iy < 0 || iy >= 5 || ix < 0 || ix >= 4) continue;
        for (int ci = 0; ci < 2; ++ci)
          expect += x.at(iy, ix, ci) * w[((ky * 3 + kx) * 2 + ci) * 3 + oc];
      }
    CHECK(out->val().at(oy, ox, oc) == doctest::Approx(expect).epsilon(1e-12));
  }

  for (int stride : {1, 2}) {
    auto rw = check_gradient(w, [&](ad::Graph& g, ad::Var wi) {
      return spread_sum(g, g.conv2d(g.leaf(x), wi, g.leaf(b), stride, 1));
    });
    CHECK(rw.max_rel_err < 1e-5);
    auto rx = check_gradient(x, [&](ad::Graph& g, ad::Var xi) {
      return spread_sum(g, g.conv2d(xi, g.leaf(w), g.leaf(b), stride, 1));
    });
    CHECK(rx.max_rel_err < 1e-5);
    auto rb = check_gradient(b, [&](ad::Graph& g, ad::Var bi) {
      return spread_sum(g, g.conv2d(g.leaf(x), g.leaf(w), bi, stride, 1));
    });
    CHECK(rb.max_rel_err < 1e-5);
  }
}

TEST_CASE("fc, upsample, pooling, slicing gradients") {
  RngStream s(14);
  Tensor x = random_tensor({4, 4, 3}, s);
  Tensor w = random_tensor({5, 48}, s, 0.3);
  Tensor b = random_tensor({5}, s, 0.1);

  auto rx = check_gradient(x, [&](ad::Graph& g, ad::Var xi) {
    return spread_sum(g, g.fc(xi, g.leaf(w), g.leaf(b)));
  });
  CHECK(rx.max_rel_err < 1e-5);
  auto rw = check_gradient(w, [&](ad::Graph& g, ad::Var wi) {
    return spread_sum(g, g.fc(g.leaf(x), wi, g.leaf(b)));
  });
  CHECK(rw.max_rel_err < 1e-5);

  auto rup = check_gradient(x, [&](ad::Graph& g, ad::Var xi) { return spread_sum(g, g.upsample2x(xi)); });
  CHECK(rup.max_rel_err < 1e-6);
  auto rgap = check_gradient(x, [&](ad::Graph& g, ad::Var xi) {
    return spread_sum(g, g.global_avg_pool(xi));
  });
  CHECK(rgap.max_rel_err < 1e-6);
  auto rslice = check_gradient(x, [&](ad::Graph& g, ad::Var xi) {
    return spread_sum(g, g.channel_slice(xi, 1, 3));
  });
  CHECK(rslice.max_rel_err < 1e-6);
  auto rconcat = check_gradient(x, [&](ad::Graph& g, ad::Var xi) {
    return spread_sum(g, g.concat(xi, g.leaf(Tensor::scalar(0.7))));
  });
  CHECK(rconcat.max_rel_err < 1e-6);
}

TEST_CASE("loss op gradients") {
  RngStream s(15);
  Tensor logits = random_tensor({4, 4, 1}, s);
  Tensor targets({4, 4, 1});
  for (int i = 0; i < targets.size(); ++i) targets[i] = s.uniform() < 0.5 ? 0.0 : 1.0;
  auto rbce = check_gradient(logits, [&](ad::Graph& g, ad::Var x) {
    return g.bce_logits_mean(x, targets);
  });
  CHECK(rbce.max_rel_err < 1e-6);

  Tensor cls = random_tensor({4, 4, 3}, s);
  std::vector<ad::CellTarget> pos;
  pos.push_back({5, 1, {0.1, -0.2, 0.3, 0.4}});
  pos.push_back({10, 2, {0.7, 0.2, -1.4, 2.0}});
  auto rce = check_gradient(cls, [&](ad::Graph& g, ad::Var x) {
    return g.cells_softmax_ce_mean(x, pos);
  });
  CHECK(rce.max_rel_err < 1e-6);

  Tensor box = random_tensor({4, 4, 4}, s);
  for (const auto& p : pos)  // keep |pred - target| away from 1 (smooth-l1 kink)
    for (int c = 0; c < 4; ++c) {
      double& v = box[p.cell * 4 + c];
      double d = v - p.delta[static_cast<size_t>(c)];
      if (std::abs(std::abs(d) - 1.0) < 0.05) v += 0.2;
    }
  auto rl1 = check_gradient(box, [&](ad::Graph& g, ad::Var x) {
    return g.cells_smooth_l1_mean(x, pos);
  });
  CHECK(rl1.max_rel_err < 1e-6);

  for (double gamma : {0.0, 1.0, 2.0, 5.0}) {
    for (bool is_target : {false, true}) {
      Tensor p({1});
      p[0] = 0.15 + 0.7 * s.uniform();
      auto rf = check_gradient(p, [&](ad::Graph& g, ad::Var x) {
        return g.focal_from_prob(x, gamma, is_target);
      });
      CHECK(rf.max_rel_err < 1e-6);
    }
  }
}

TEST_CASE("roi_bilinear matches a per-point bilinear oracle and its gradient checks") {
  RngStream s(16);
  Tensor feat = random_tensor({6, 6, 2}, s);
  const std::array<double, 4> box{5.0, 3.0, 17.0, 13.0};
  const int P = 4;
  const double stride = 4.0;

  ad::Graph g;
  ad::Var out = g.roi_bilinear(g.leaf(feat), box, P, stride);

  for (int a = 0; a < P; ++a) {
    for (int b = 0; b < P; ++b) {
      const double py = box[1] + (a + 0.5) * (box[3] - box[1]) / P;
      const double px = box[0] + (b + 0.5) * (box[2] - box[0]) / P;
      double fy = std::clamp(py / stride - 0.5, 0.0, 5.0);
      double fx = std::clamp(px / stride - 0.5, 0.0, 5.0);
      const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
      const int y1 = std::min(y0 + 1, 5), x1 = std::min(x0 + 1, 5);
      const double ty = fy - y0, tx = fx - x0;
      for (int c = 0; c < 2; ++c) {
        const double expect = (1 - ty) * (1 - tx) * feat.at(y0, x0, c) + (1 - ty) * tx * feat.at(y0, x1, c) +
                              ty * (1 - tx) * feat.at(y1, x0, c) + ty * tx * feat.at(y1, x1, c);
        CHECK(out->val().at(a, b, c) == doctest::Approx(expect).epsilon(1e-9));
      }
    }
  }

  auto r = check_gradient(feat, [&](ad::Graph& g2, ad::Var f) {
    return spread_sum(g2, g2.roi_bilinear(f, box, P, stride));
  });
  CHECK(r.max_rel_err < 1e-6);

  Tensor constant({6, 6, 2});
  constant.fill(3.25);
  ad::Graph g3;
  ad::Var cout = g3.roi_bilinear(g3.leaf(constant), box, P, stride);
  for (int i = 0; i < cout->val().size(); ++i) CHECK(cout->val()[i] == doctest::Approx(3.25).epsilon(1e-12));

  ad::Graph g4;
  CHECK_THROWS_AS(g4.roi_bilinear(g4.leaf(feat), {3.0, 2.0, 3.0, 5.0}, P, stride), std::invalid_argument);
}

TEST_CASE("gradient reversal: identity forward, exact -lambda backward") {
  RngStream s(17);
  Tensor x = random_tensor({5}, s);

  ad::Graph g;
  ad::Var leaf = g.param(x);
  ad::Var rev = g.gradient_reversal(leaf, 0.1);
  for (int i = 0; i < x.size(); ++i) CHECK(rev->val()[i] == x[i]);
  ad::Var root = g.scale(g.index(rev, 2), 2.0);  // upstream gradient 2.0 at element 2
  g.backward(root);
  CHECK(leaf->grad[2] == -0.2);
  CHECK(leaf->grad[0] == 0.0);

  // lambda = 0 detaches
  ad::Graph g2;
  ad::Var leaf2 = g2.param(x);
  ad::Var root2 = g2.scale(g2.index(g2.gradient_reversal(leaf2, 0.0), 1), 3.0);
  g2.backward(root2);
  CHECK(leaf2->grad[1] == 0.0);

  // for an arbitrary downstream graph, gradient-through-reversal equals
  // (-lambda) x gradient-with-reversal-removed to machine precision
  Tensor w = random_tensor({3, 5}, s);
  Tensor bias = random_tensor({3}, s);
  const double lambda = 0.37;
  auto tail = [&](ad::Graph& gg, ad::Var in) {
    return gg.dot_const(gg.sigmoid(gg.fc(in, gg.leaf(w), gg.leaf(bias))), {0.4, -1.2, 0.9});
  };
  ad::Graph ga, gb2;
  ad::Var la = ga.param(x);
  ga.backward(tail(ga, ga.gradient_reversal(la, lambda)));
  ad::Var lb = gb2.param(x);
  gb2.backward(tail(gb2, lb));
  for (int i = 0; i < x.size(); ++i)
    CHECK(la->grad[i] == doctest::Approx(-lambda * lb->grad[i]).epsilon(1e-13));
}
