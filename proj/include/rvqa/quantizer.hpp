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

#include <cstdint>
#include <string>
#include <vector>

#include "rvqa/common.hpp"

namespace rvqa {

/// T x d frames: representations, decoded frames or residuals.
struct FrameSequence {
  Matrix values;
  std::string tag;

  std::size_t frames() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }
};

struct KMeansParams {
  std::size_t max_iters = 100;
  double tol = 1e-6;  // stop when relative WCSS improvement falls below this
  std::size_t restarts = 1;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  Matrix centroids;                  // k x d
  std::vector<std::uint32_t> assignment;
  double wcss = 0.0;
  /// WCSS after each assignment step of the winning restart.
  std::vector<double> history;
  /// Every restart's history, in restart order.
  std::vector<std::vector<double>> restart_histories;
};

/// Lloyd's algorithm with k-means++ seeding; keeps the lowest-WCSS restart.
KMeansResult kmeans_fit(const Matrix& data, std::size_t k, const KMeansParams& params);

/// Nearest centroid by squared Euclidean distance, lowest index on ties.
std::uint32_t nearest_centroid(const Matrix& centroids, std::span<const double> x,
                               double* distance = nullptr);

struct Codebook {
  Matrix centroids;  // N x d
  std::size_t stage = 1;
};

class RvqModel {
 public:
  RvqModel() = default;
  explicit RvqModel(std::vector<Codebook> codebooks, std::vector<double> train_stats = {});

  std::size_t stages() const { return codebooks_.size(); }
  std::size_t codebook_size() const;
  std::size_t dim() const;
  const std::vector<Codebook>& codebooks() const { return codebooks_; }
  /// Mean (over frames) squared residual norm after each stage on the
  /// training data. Empty for models loaded from file.
  const std::vector<double>& train_stats() const { return train_stats_; }

 private:
  std::vector<Codebook> codebooks_;
  std::vector<double> train_stats_;
};

/// Stage-wise k-means on successive residuals. Centroids are rounded to
/// float32 so models survive the codebook file format unchanged.
RvqModel rvq_fit(const FrameSequence& data, std::size_t stages, std::size_t codebook_size,
                 const KMeansParams& params);

struct UnitSequence {
  std::size_t frames = 0;
  std::size_t stages = 0;
  std::size_t codebook_size = 0;
  std::vector<std::uint32_t> codes;  // frame-major, stage-minor

  std::uint32_t at(std::size_t t, std::size_t stage) const { return codes[t * stages + stage]; }
  bool operator==(const UnitSequence& other) const = default;
};

UnitSequence encode(const RvqModel& model, const FrameSequence& frames);

/// Sum of the selected centroids of the first units.stages stages.
FrameSequence decode(const RvqModel& model, const UnitSequence& units);

/// Keeps the first `stages` codes of every frame.
UnitSequence truncate(const UnitSequence& units, std::size_t stages);

/// frames - decode(encode(frames)) using the first upto_stage stages.
FrameSequence residual(const RvqModel& model, const FrameSequence& frames,
                       std::size_t upto_stage);

/// Mean over frames of the squared Euclidean norm of a - b.
double mean_squared_error(const Matrix& a, const Matrix& b);

}  // namespace rvqa
