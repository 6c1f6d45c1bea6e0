#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "wsda/autodiff.hpp"
#include "wsda/rng.hpp"

namespace wsda::test {

// Central finite-difference check of d(scalar)/d(leaf) for every element of
// `leaf`, against the gradient the graph produced. `build` must construct a
// fresh graph from the current leaf contents and return the scalar root.
// Returns the worst relative error.
struct GradCheck {
  double max_rel_err = 0.0;
  int checked = 0;
};

inline GradCheck check_gradient(Tensor& leaf_storage,
                                const std::function<ad::Var(ad::Graph&, ad::Var)>& build,
                                double step = 1e-5) {
  GradCheck result;

  ad::Graph g;
  ad::Var leaf = g.param(leaf_storage);
  ad::Var root = build(g, leaf);
  g.backward(root);
  Tensor analytic = leaf->grad.empty() ? Tensor(leaf_storage.dims()) : leaf->grad;

  auto eval = [&]() {
    ad::Graph g2;
    ad::Var l2 = g2.param(leaf_storage);
    return build(g2, l2)->val()[0];
  };

  for (int i = 0; i < leaf_storage.size(); ++i) {
    const double saved = leaf_storage[i];
    leaf_storage[i] = saved + step;
    const double up = eval();
    leaf_storage[i] = saved - step;
    const double down = eval();
    leaf_storage[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-4});
    result.max_rel_err = std::max(result.max_rel_err, std::abs(numeric - analytic[i]) / denom);
    ++result.checked;
  }
  return result;
}

inline Tensor random_tensor(std::vector<int> dims, RngStream& s, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (int i = 0; i < t.size(); ++i) t[i] = scale * s.normal();
  return t;
}

inline std::string temp_dir(const std::string& tag) {
  static int counter = 0;
  return "test_tmp/" + tag + "_" + std::to_string(counter++);
}

}  // namespace wsda::test
