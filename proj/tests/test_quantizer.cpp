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

#include <cmath>

#include "doctest.h"
#include "rvqa/quantizer.hpp"
#include "synthetic.hpp"

using namespace rvqa;
using namespace rvqa::testing;

TEST_CASE("two-means on {0,1,10,11}") {
  const Matrix data(4, 1, {0.0, 1.0, 10.0, 11.0});
  CHECK(brute_force_two_means(data) == 1.0);
  KMeansParams p;
  p.restarts = 5;
  const KMeansResult km = kmeans_fit(data, 2, p);
  CHECK(km.wcss == doctest::Approx(1.0).epsilon(1e-12));
  const double a = std::min(km.centroids(0, 0), km.centroids(1, 0));
  const double b = std::max(km.centroids(0, 0), km.centroids(1, 0));
  CHECK(a == 0.5);
  CHECK(b == 10.5);
}

TEST_CASE("k=1 gives the global mean") {
  const Matrix data = random_matrix(200, 3, 4);
  const KMeansResult km = kmeans_fit(data, 1, KMeansParams{});
  double total_sq = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (std::size_t t = 0; t < data.rows(); ++t) mean += data(t, j);
    mean /= data.rows();
    CHECK(km.centroids(0, j) == doctest::Approx(mean).epsilon(1e-12));
    for (std::size_t t = 0; t < data.rows(); ++t) total_sq += (data(t, j) - mean) * (data(t, j) - mean);
  }
  CHECK(km.wcss == doctest::Approx(total_sq).epsilon(1e-10));
}

TEST_CASE("repeated distinct points fit exactly") {
  Matrix data(30, 2);
  for (std::size_t t = 0; t < 30; ++t) {
    data(t, 0) = static_cast<double>(t % 3) * 5.0;
    data(t, 1) = static_cast<double>(t % 3) - 1.0;
  }
  KMeansParams p;
  p.restarts = 3;
  CHECK(kmeans_fit(data, 3, p).wcss == 0.0);
}

TEST_CASE("kmeans errors") {
  CHECK_THROWS_WITH_AS(kmeans_fit(Matrix(2, 1), 3, KMeansParams{}),
                       doctest::Contains("fewer points than clusters"), DataError);
  Matrix bad(3, 1, {0.0, NAN, 1.0});
  CHECK_THROWS_AS(kmeans_fit(bad, 2, KMeansParams{}), DataError);
}

TEST_CASE("empty clusters are re-seeded so k centroids stay distinct") {
  // Six copies of two points and k = 4: k-means++ must fall back to
  // duplicates and the re-seed path keeps WCSS at zero.
  Matrix data(6, 1, {0.0, 0.0, 0.0, 1.0, 1.0, 1.0});
  const KMeansResult km = kmeans_fit(data, 4, KMeansParams{});
  CHECK(km.wcss == 0.0);
}

TEST_CASE("Lloyd history never increases") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix data = gaussian_mixture(300, 4, 6, seed, 2.0, 1.0);
    KMeansParams p;
    p.seed = seed;
    p.restarts = 2;
    p.tol = 0.0;
    const KMeansResult km = kmeans_fit(data, 5, p);
    for (const auto& h : km.restart_histories) {
      for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i] <= h[i - 1]);
    }
  }
}

TEST_CASE("kmeans result does not depend on thread count") {
  const Matrix data = gaussian_mixture(4000, 8, 10, 3);
  KMeansParams p;
  p.seed = 11;
  setenv("RVQA_THREADS", "1", 1);
  const KMeansResult a = kmeans_fit(data, 8, p);
  setenv("RVQA_THREADS", "4", 1);
  const KMeansResult b = kmeans_fit(data, 8, p);
  unsetenv("RVQA_THREADS");
  CHECK(a.centroids == b.centroids);
  CHECK(a.wcss == b.wcss);
}

TEST_CASE("RVQ with one stage is vanilla k-means") {
  const Matrix data = gaussian_mixture(500, 3, 5, 8);
  KMeansParams p;
  p.seed = 2;
  const RvqModel model = rvq_fit(frames_of(data), 1, 4, p);
  KMeansParams stage = p;
  stage.seed = mix_seed(p.seed, 1000);
  KMeansResult km = kmeans_fit(data, 4, stage);
  round_to_float(km.centroids);
  CHECK(model.codebooks()[0].centroids == km.centroids);
}

TEST_CASE("exact data quantises to zero residual at every stage") {
  Matrix data(40, 2);
  for (std::size_t t = 0; t < 40; ++t) {
    data(t, 0) = static_cast<double>(t % 4);
    data(t, 1) = static_cast<double>((t % 4) * (t % 4));
  }
  KMeansParams p;
  p.restarts = 4;
  const RvqModel model = rvq_fit(frames_of(data), 3, 4, p);
  for (double s : model.train_stats()) CHECK(s == 0.0);
}

TEST_CASE("RVQ stage monotonicity and encode/decode consistency") {
  const Matrix data = gaussian_mixture(2000, 6, 12, 21);
  KMeansParams p;
  p.seed = 5;
  const FrameSequence frames = frames_of(data);
  const RvqModel model = rvq_fit(frames, 4, 8, p);
  REQUIRE(model.train_stats().size() == 4);
  for (std::size_t i = 1; i < 4; ++i) CHECK(model.train_stats()[i] <= model.train_stats()[i - 1]);

  const UnitSequence units = encode(model, frames);
  for (std::size_t l = 0; l <= 4; ++l) {
    const FrameSequence rec = decode(model, truncate(units, l));
    const double mse = mean_squared_error(data, rec.values);
    if (l > 0) CHECK(mse == doctest::Approx(model.train_stats()[l - 1]).epsilon(1e-9));
    const FrameSequence res = residual(model, frames, l);
    double res_ms = 0.0;
    for (std::size_t t = 0; t < res.frames(); ++t) {
      for (double v : res.values.row(t)) res_ms += v * v;
    }
    CHECK(res_ms / res.frames() == doctest::Approx(mse).epsilon(1e-12));
  }
  // Truncation coherence.
  const double full = mean_squared_error(data, decode(model, units).values);
  for (std::size_t l = 1; l < 4; ++l) {
    CHECK(mean_squared_error(data, decode(model, truncate(units, l)).values) >= full);
  }
}

TEST_CASE("two stages never train worse than one") {
  const Matrix data = gaussian_mixture(1500, 4, 30, 13);
  KMeansParams p;
  const double one = rvq_fit(frames_of(data), 1, 8, p).train_stats().back();
  const double two = rvq_fit(frames_of(data), 2, 8, p).train_stats().back();
  CHECK(two <= one);
}

TEST_CASE("encode matches an exhaustive nearest-neighbour scan") {
  const Matrix data = gaussian_mixture(600, 5, 9, 31);
  const RvqModel model = rvq_fit(frames_of(data), 3, 6, KMeansParams{});
  const Matrix probe = random_matrix(200, 5, 77, 3.0);
  const UnitSequence units = encode(model, frames_of(probe));
  CHECK(units.codes == brute_force_codes(model, probe));
}

TEST_CASE("encode tie-break and exact matches") {
  Matrix c(6, 1, {0.0, 9.0, 1.0, 7.0, 8.0, 3.0});
  const RvqModel model({Codebook{c, 1}});
  // 2.0 is equidistant from centroid 2 (1.0) and centroid 5 (3.0).
  const UnitSequence u = encode(model, frames_of(Matrix(2, 1, {2.0, 7.0})));
  CHECK(u.at(0, 0) == 2);
  CHECK(u.at(1, 0) == 3);
  const FrameSequence r = residual(model, frames_of(Matrix(1, 1, {7.0})), 1);
  CHECK(r.values(0, 0) == 0.0);
  CHECK(decode(model, u).values(1, 0) == 7.0);
}

TEST_CASE("decode sums one centroid per stage") {
  const RvqModel model({Codebook{Matrix(2, 2, {1.0, 2.0, 3.0, 4.0}), 1},
                        Codebook{Matrix(2, 2, {0.5, -1.0, 10.0, 20.0}), 2}});
  UnitSequence u{3, 2, 2, {0, 0, 0, 1, 1, 1}};
  const FrameSequence f = decode(model, u);
  CHECK(f.values == Matrix(3, 2, {1.5, 1.0, 11.0, 22.0, 13.0, 24.0}));
  // Rate scalability: one stage only.
  CHECK(decode(model, truncate(u, 1)).values == Matrix(3, 2, {1.0, 2.0, 1.0, 2.0, 3.0, 4.0}));
}

TEST_CASE("all-zero codebooks decode to zeros") {
  const RvqModel model({Codebook{Matrix(4, 3), 1}, Codebook{Matrix(4, 3), 2}});
  UnitSequence u{2, 2, 4, {3, 1, 0, 2}};
  const FrameSequence f = decode(model, u);
  for (double v : f.values.data()) CHECK(v == 0.0);
}

TEST_CASE("quantizer errors") {
  const RvqModel model({Codebook{Matrix(2, 2), 1}});
  CHECK_THROWS_AS(encode(model, frames_of(Matrix(1, 3))), DataError);
  UnitSequence bad{1, 1, 2, {5}};
  CHECK_THROWS_AS(decode(model, bad), DataError);
  UnitSequence deep{1, 2, 2, {0, 0}};
  CHECK_THROWS_AS(decode(model, deep), DataError);
  CHECK_THROWS_AS(residual(model, frames_of(Matrix(1, 2)), 2), UsageError);
  CHECK_THROWS_AS(rvq_fit(frames_of(Matrix(4, 2)), 0, 2, KMeansParams{}), UsageError);
  CHECK(residual(model, frames_of(Matrix(1, 2, {3.0, 4.0})), 0).values == Matrix(1, 2, {3.0, 4.0}));
}

TEST_CASE("encode is deterministic") {
  const Matrix data = gaussian_mixture(300, 3, 4, 17);
  const RvqModel model = rvq_fit(frames_of(data), 2, 4, KMeansParams{});
  CHECK(encode(model, frames_of(data)) == encode(model, frames_of(data)));
}
