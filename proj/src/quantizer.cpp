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

#include "rvqa/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rvqa {

std::uint32_t nearest_centroid(const Matrix& centroids, std::span<const double> x,
                               double* distance) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.rows(); ++j) {
    const double d = squared_distance(x, centroids.row(j));
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(j);
    }
  }
  if (distance) *distance = best_d;
  return best;
}

namespace {

void check_finite(const Matrix& data) {
  if (!data.all_finite()) throw DataError("non-finite values in frame data");
}

Matrix kmeans_plus_plus(const Matrix& data, std::size_t k, Rng& rng) {
  const std::size_t n = data.rows();
  Matrix centers(k, data.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.below(n);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy(data.row(pick).begin(), data.row(pick).end(), centers.row(c).begin());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(data.row(i), centers.row(c)));
      total += d2[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      pick = rng.below(n);
      continue;
    }
    const double target = rng.uniform() * total;
    double acc = 0.0;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc > target && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
  }
  return centers;
}

// Assigns every point and returns WCSS; per-point distances land in `dist`.
double assign(const Matrix& data, const Matrix& centers, std::vector<std::uint32_t>& labels,
              std::vector<double>& dist) {
  parallel_for(data.rows(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      labels[i] = nearest_centroid(centers, data.row(i), &dist[i]);
    }
  });
  // Fixed-order reduction keeps the result independent of the thread count.
  return std::accumulate(dist.begin(), dist.end(), 0.0);
}

Matrix update_centers(const Matrix& data, const Matrix& old_centers,
                      const std::vector<std::uint32_t>& labels, const std::vector<double>& dist) {
  const std::size_t k = old_centers.rows(), d = data.cols();
  Matrix sums(k, d);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    auto s = sums.row(labels[i]);
    auto x = data.row(i);
    for (std::size_t j = 0; j < d; ++j) s[j] += x[j];
    ++counts[labels[i]];
  }
  Matrix centers(k, d);
  std::vector<std::size_t> by_distance;
  std::size_t next_far = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] > 0) {
      for (std::size_t j = 0; j < d; ++j) centers(c, j) = sums(c, j) / counts[c];
      continue;
    }
    // Empty cluster: re-seed from the point farthest from its centroid.
    if (by_distance.empty()) {
      by_distance.resize(data.rows());
      std::iota(by_distance.begin(), by_distance.end(), 0);
      std::stable_sort(by_distance.begin(), by_distance.end(),
                       [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
    }
    const std::size_t src = by_distance[std::min(next_far++, by_distance.size() - 1)];
    std::copy(data.row(src).begin(), data.row(src).end(), centers.row(c).begin());
  }
  return centers;
}

struct LloydRun {
  Matrix centers;
  std::vector<std::uint32_t> labels;
  double wcss = 0.0;
  std::vector<double> history;
};

LloydRun lloyd(const Matrix& data, Matrix centers, const KMeansParams& params) {
  const std::size_t n = data.rows();
  LloydRun run;
  run.labels.assign(n, 0);
  std::vector<double> dist(n);
  run.wcss = assign(data, centers, run.labels, dist);
  run.centers = centers;
  run.history.push_back(run.wcss);

  std::vector<std::uint32_t> labels(n);
  for (std::size_t it = 0; it < params.max_iters; ++it) {
    Matrix next = update_centers(data, run.centers, run.labels, dist);
    std::vector<double> next_dist(n);
    const double w = assign(data, next, labels, next_dist);
    // Rounding can make a converged update look like a tiny increase; the
    // previous state is kept so the objective never goes up.
    if (!(w <= run.wcss)) break;
    const double improvement = run.wcss - w;
    run.centers = std::move(next);
    run.labels = labels;
    dist.swap(next_dist);
    run.history.push_back(w);
    const double prev = run.wcss;
    run.wcss = w;
    if (prev == 0.0 || improvement / prev < params.tol) break;
  }
  return run;
}

}  // namespace

KMeansResult kmeans_fit(const Matrix& data, std::size_t k, const KMeansParams& params) {
  if (k < 1) throw UsageError("k must be at least 1");
  if (data.rows() < k) {
    throw DataError("fewer points than clusters (" + std::to_string(data.rows()) + " < " +
                    std::to_string(k) + ")");
  }
  if (data.cols() < 1) throw DataError("frame dimension must be at least 1");
  check_finite(data);
  const std::size_t restarts = std::max<std::size_t>(1, params.restarts);

  KMeansResult best;
  best.wcss = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(mix_seed(params.seed, r));
    LloydRun run = lloyd(data, kmeans_plus_plus(data, k, rng), params);
    best.restart_histories.push_back(run.history);
    if (run.wcss < best.wcss) {
      best.wcss = run.wcss;
      best.centroids = std::move(run.centers);
      best.assignment = std::move(run.labels);
      best.history = std::move(run.history);
    }
  }
  return best;
}

RvqModel::RvqModel(std::vector<Codebook> codebooks, std::vector<double> train_stats)
    : codebooks_(std::move(codebooks)), train_stats_(std::move(train_stats)) {
  for (std::size_t i = 0; i < codebooks_.size(); ++i) {
    const auto& cb = codebooks_[i];
    if (cb.stage != i + 1) throw DataError("codebook stages must be numbered 1..L");
    if (cb.centroids.rows() < 1) throw DataError("codebook must have at least one centroid");
    if (cb.centroids.cols() != codebooks_.front().centroids.cols()) {
      throw DataError("codebooks disagree on dimension");
    }
    if (cb.centroids.rows() != codebooks_.front().centroids.rows()) {
      throw DataError("codebooks disagree on size");
    }
    for (double v : cb.centroids.data()) {
      if (std::isnan(v)) throw DataError("NaN centroid");
    }
  }
}

std::size_t RvqModel::codebook_size() const {
  return codebooks_.empty() ? 0 : codebooks_.front().centroids.rows();
}

std::size_t RvqModel::dim() const {
  return codebooks_.empty() ? 0 : codebooks_.front().centroids.cols();
}

double mean_squared_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw UsageError("shape mismatch in MSE");
  if (a.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < a.rows(); ++t) total += squared_distance(a.row(t), b.row(t));
  return total / static_cast<double>(a.rows());
}

namespace {

// Encodes one stage in place: picks codes and subtracts the chosen centroids.
void encode_stage(const Matrix& centroids, Matrix& residuals, std::vector<std::uint32_t>& codes,
                  std::size_t stride, std::size_t offset) {
  parallel_for(residuals.rows(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      auto r = residuals.row(t);
      const std::uint32_t c = nearest_centroid(centroids, r);
      codes[t * stride + offset] = c;
      auto v = centroids.row(c);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] -= v[j];
    }
  });
}

double mean_squared_norm(const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < m.rows(); ++t) {
    for (double v : m.row(t)) total += v * v;
  }
  return total / static_cast<double>(m.rows());
}

}  // namespace

RvqModel rvq_fit(const FrameSequence& data, std::size_t stages, std::size_t codebook_size,
                 const KMeansParams& params) {
  if (stages < 1) throw UsageError("number of stages L must be at least 1");
  if (codebook_size < 1) throw UsageError("codebook size N must be at least 1");
  Matrix residuals = data.values;
  std::vector<Codebook> books;
  std::vector<double> stats;
  std::vector<std::uint32_t> scratch(residuals.rows());
  for (std::size_t i = 0; i < stages; ++i) {
    KMeansParams stage_params = params;
    stage_params.seed = mix_seed(params.seed, 1000 + i);
    KMeansResult km = kmeans_fit(residuals, codebook_size, stage_params);
    round_to_float(km.centroids);
    encode_stage(km.centroids, residuals, scratch, 1, 0);
    stats.push_back(mean_squared_norm(residuals));
    books.push_back(Codebook{std::move(km.centroids), i + 1});
  }
  return RvqModel(std::move(books), std::move(stats));
}

UnitSequence encode(const RvqModel& model, const FrameSequence& frames) {
  if (frames.dim() != model.dim()) {
    throw DataError("dimension mismatch: frames have d=" + std::to_string(frames.dim()) +
                    ", model has d=" + std::to_string(model.dim()));
  }
  UnitSequence units;
  units.frames = frames.frames();
  units.stages = model.stages();
  units.codebook_size = model.codebook_size();
  units.codes.assign(units.frames * units.stages, 0);
  Matrix residuals = frames.values;
  for (std::size_t i = 0; i < model.stages(); ++i) {
    encode_stage(model.codebooks()[i].centroids, residuals, units.codes, units.stages, i);
  }
  return units;
}

FrameSequence decode(const RvqModel& model, const UnitSequence& units) {
  if (units.stages > model.stages()) {
    throw DataError("units use " + std::to_string(units.stages) + " stages, model has " +
                    std::to_string(model.stages()));
  }
  if (units.codes.size() != units.frames * units.stages) {
    throw DataError("unit sequence code count does not match its shape");
  }
  FrameSequence out;
  out.values = Matrix(units.frames, model.dim());
  const std::size_t n = model.codebook_size();
  for (std::size_t t = 0; t < units.frames; ++t) {
    auto r = out.values.row(t);
    for (std::size_t i = 0; i < units.stages; ++i) {
      const std::uint32_t c = units.at(t, i);
      if (c >= n) {
        throw DataError("code " + std::to_string(c) + " out of range for N=" + std::to_string(n));
      }
      auto v = model.codebooks()[i].centroids.row(c);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += v[j];
    }
  }
  return out;
}

UnitSequence truncate(const UnitSequence& units, std::size_t stages) {
  if (stages > units.stages) throw UsageError("cannot truncate to more stages than present");
  UnitSequence out;
  out.frames = units.frames;
  out.stages = stages;
  out.codebook_size = units.codebook_size;
  out.codes.reserve(units.frames * stages);
  for (std::size_t t = 0; t < units.frames; ++t) {
    for (std::size_t i = 0; i < stages; ++i) out.codes.push_back(units.at(t, i));
  }
  return out;
}

FrameSequence residual(const RvqModel& model, const FrameSequence& frames,
                       std::size_t upto_stage) {
  if (upto_stage > model.stages()) {
    throw UsageError("upto_stage " + std::to_string(upto_stage) + " exceeds model stages " +
                     std::to_string(model.stages()));
  }
  const UnitSequence units = truncate(encode(model, frames), upto_stage);
  const FrameSequence decoded = decode(model, units);
  FrameSequence out;
  out.tag = frames.tag.empty() ? "residual" : frames.tag + "-residual" + std::to_string(upto_stage);
  out.values = frames.values;
  for (std::size_t k = 0; k < out.values.size(); ++k) {
    out.values.data()[k] -= decoded.values.data()[k];
  }
  return out;
}

}  // namespace rvqa
