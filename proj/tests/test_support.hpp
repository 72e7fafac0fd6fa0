#pragma once

#include "cteg/rng.hpp"
#include "cteg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace cteg::testing {

// Central-difference gradient of a scalar objective with respect to one leaf,
// written independently of the library's grad_check.
inline Matrix numeric_gradient(const std::function<double()>& f, Tensor leaf, double eps = 1e-6) {
  Matrix& data = leaf.leaf_value();
  Matrix g(data.rows(), data.cols());
  for (Index i = 0; i < data.rows(); ++i) {
    for (Index j = 0; j < data.cols(); ++j) {
      const double saved = data(i, j);
      data(i, j) = saved + eps;
      const double plus = f();
      data(i, j) = saved - eps;
      const double minus = f();
      data(i, j) = saved;
      g(i, j) = (plus - minus) / (2.0 * eps);
    }
  }
  return g;
}

inline double max_rel_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    worst = std::max(worst, std::abs(x - y) / std::max({1.0, std::abs(x), std::abs(y)}));
  }
  return worst;
}

inline Matrix random_matrix(std::uint64_t seed, Index rows, Index cols) {
  RngStream rng(seed);
  return rng.normal_matrix(rows, cols);
}

}  // namespace cteg::testing
