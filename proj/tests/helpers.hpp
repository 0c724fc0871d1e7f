#pragma once

// Shared fixtures for the unit tests.

#include <filesystem>
#include <string>
#include <vector>

#include "pauc/losses.hpp"
#include "pauc/numcore.hpp"
#include "pauc/protoclust.hpp"

namespace testutil {

inline pauc::Matrix random_matrix(int rows, int cols, pauc::RngStream& rng,
                                  double scale = 1.0) {
  pauc::Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

inline pauc::Matrix random_unit_rows(int rows, int cols, pauc::RngStream& rng) {
  return pauc::l2_normalize_rows(random_matrix(rows, cols, rng));
}

// Fixed prototype set over `n` samples: random unit centroids, random
// assignments, phi in [0.2, 1.0]. Constant input for loss tests.
inline pauc::PrototypeSet random_protoset(int n, int dim, const std::vector<int>& ks,
                                          pauc::RngStream& rng) {
  pauc::PrototypeSet set;
  for (int k : ks) {
    pauc::PrototypeLevel level;
    level.k = k;
    level.centroids = random_unit_rows(k, dim, rng);
    level.assignments.resize(static_cast<size_t>(n));
    // Every cluster gets at least one member so no prototype is empty.
    for (int i = 0; i < n; ++i) {
      level.assignments[static_cast<size_t>(i)] =
          i < k ? i : static_cast<int32_t>(rng.uniform_int(static_cast<uint64_t>(k)));
    }
    level.phi.resize(k);
    for (int j = 0; j < k; ++j) level.phi(j) = rng.uniform(0.2, 1.0);
    set.levels.push_back(std::move(level));
  }
  return set;
}

// Gradient of loss(l2_normalize_rows(x)) given the gradient at the
// normalized rows, for finite-difference checks against gated losses.
inline pauc::Matrix chain_through_normalize(const pauc::Matrix& x,
                                            const pauc::Matrix& grad_at_unit) {
  pauc::Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double norm = x.row(i).norm();
    Eigen::RowVectorXd v = x.row(i) / norm;
    const auto g = grad_at_unit.row(i);
    out.row(i) = (g - v * v.dot(g)) / norm;
  }
  return out;
}

// Fresh per-tag scratch directory under the working directory.
inline std::string temp_dir(const std::string& tag) {
  std::string path = "test_tmp_" + tag;
  std::filesystem::remove_all(path);
  std::filesystem::create_directories(path);
  return path;
}

}  // namespace testutil
