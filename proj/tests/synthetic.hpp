// Copyright 2026 The rvqa Authors
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

// Test-only data generators and brute-force oracles.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "rvqa/common.hpp"
#include "rvqa/quantizer.hpp"

namespace rvqa::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                            double scale = 1.0) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

/// `frames` draws from a mixture of `components` isotropic Gaussians whose
/// means are spread with `spread` and whose within-component std is `noise`.
inline Matrix gaussian_mixture(std::size_t frames, std::size_t dim, std::size_t components,
                               std::uint64_t seed, double spread = 3.0, double noise = 0.5,
                               std::vector<std::size_t>* component_of = nullptr) {
  Rng rng(seed);
  Matrix means(components, dim);
  for (double& v : means.data()) v = spread * rng.normal();
  Matrix out(frames, dim);
  if (component_of) component_of->resize(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t c = rng.below(components);
    if (component_of) (*component_of)[t] = c;
    for (std::size_t j = 0; j < dim; ++j) out(t, j) = means(c, j) + noise * rng.normal();
  }
  return out;
}

/// Minimum WCSS over every split of the points into two non-empty groups.
inline double brute_force_two_means(const Matrix& data) {
  const std::size_t n = data.rows(), d = data.cols();
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t mask = 1; mask + 1 < (std::uint64_t{1} << n); ++mask) {
    double wcss = 0.0;
    for (int side = 0; side < 2; ++side) {
      std::vector<double> mean(d, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (((mask >> i) & 1) != static_cast<std::uint64_t>(side)) continue;
        for (std::size_t j = 0; j < d; ++j) mean[j] += data(i, j);
        ++count;
      }
      for (double& m : mean) m /= static_cast<double>(count);
      for (std::size_t i = 0; i < n; ++i) {
        if (((mask >> i) & 1) != static_cast<std::uint64_t>(side)) continue;
        for (std::size_t j = 0; j < d; ++j) wcss += (data(i, j) - mean[j]) * (data(i, j) - mean[j]);
      }
    }
    best = std::min(best, wcss);
  }
  return best;
}

/// Exhaustive per-stage nearest-neighbour scan, written independently of the
/// library's encoder.
inline std::vector<std::uint32_t> brute_force_codes(const RvqModel& model, const Matrix& frames) {
  std::vector<std::uint32_t> codes;
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    std::vector<double> r(frames.row(t).begin(), frames.row(t).end());
    for (const auto& cb : model.codebooks()) {
      std::uint32_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < cb.centroids.rows(); ++j) {
        double dist = 0.0;
        for (std::size_t k = 0; k < r.size(); ++k) {
          const double diff = r[k] - cb.centroids(j, k);
          dist += diff * diff;
        }
        if (dist < best_d) {
          best_d = dist;
          best = static_cast<std::uint32_t>(j);
        }
      }
      codes.push_back(best);
      for (std::size_t k = 0; k < r.size(); ++k) r[k] -= cb.centroids(best, k);
    }
  }
  return codes;
}

inline FrameSequence frames_of(Matrix m, std::string tag = "synthetic") {
  return FrameSequence{std::move(m), std::move(tag)};
}

/// Per-frame MSE of the best affine map from `x` to `y`, by least squares.
inline double least_squares_mse(const Matrix& x, const Matrix& y) {
  const auto n = static_cast<Eigen::Index>(x.rows());
  Eigen::MatrixXd a(n, static_cast<Eigen::Index>(x.cols()) + 1);
  Eigen::MatrixXd b(n, static_cast<Eigen::Index>(y.cols()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) a(i, j) = x(i, j);
    a(i, a.cols() - 1) = 1.0;
    for (std::size_t j = 0; j < y.cols(); ++j) b(i, j) = y(i, j);
  }
  const Eigen::MatrixXd w = a.completeOrthogonalDecomposition().solve(b);
  return (a * w - b).squaredNorm() / static_cast<double>(n);
}

/// Per-frame squared distance of `y` from its column means.
inline double total_variance(const Matrix& y) {
  std::vector<double> mean(y.cols(), 0.0);
  for (std::size_t t = 0; t < y.rows(); ++t) {
    for (std::size_t j = 0; j < y.cols(); ++j) mean[j] += y(t, j);
  }
  for (double& m : mean) m /= static_cast<double>(y.rows());
  double v = 0.0;
  for (std::size_t t = 0; t < y.rows(); ++t) {
    for (std::size_t j = 0; j < y.cols(); ++j) v += (y(t, j) - mean[j]) * (y(t, j) - mean[j]);
  }
  return v / static_cast<double>(y.rows());
}

/// y = x A + b with A and b drawn from `seed`.
inline Matrix planted_linear(const Matrix& x, std::size_t out, std::uint64_t seed) {
  const Matrix a = random_matrix(x.cols(), out, seed);
  const Matrix b = random_matrix(1, out, seed + 1);
  Matrix y(x.rows(), out);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b(0, o);
      for (std::size_t j = 0; j < x.cols(); ++j) acc += x(t, j) * a(j, o);
      y(t, o) = acc;
    }
  }
  return y;
}

}  // namespace rvqa::testing
