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
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "nlohmann/json.hpp"
#include "rvqa/bitstream.hpp"
#include "rvqa/io.hpp"
#include "rvqa/quantizer.hpp"
#include "rvqa/rvqa.h"
#include "synthetic.hpp"

namespace fs = std::filesystem;
using namespace rvqa;
using rvqa::testing::gaussian_mixture;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "rvqa_test_capi";
  fs::create_directories(dir);
  return dir / name;
}

rvqa_matrix* to_c(const Matrix& m) {
  rvqa_matrix* out = nullptr;
  REQUIRE(rvqa_matrix_create(m.rows(), m.cols(), m.data().data(), &out) == RVQA_OK);
  return out;
}

std::vector<double> values_of(const rvqa_matrix* m) {
  std::vector<double> v(rvqa_matrix_rows(m) * rvqa_matrix_cols(m));
  REQUIRE(rvqa_matrix_values(m, v.data(), v.size()) == RVQA_OK);
  return v;
}

}  // namespace

TEST_CASE("matrix handles copy values and report their shape") {
  const double values[] = {1, 2, 3, 4, 5, 6};
  rvqa_matrix* m = nullptr;
  REQUIRE(rvqa_matrix_create(2, 3, values, &m) == RVQA_OK);
  CHECK(rvqa_matrix_rows(m) == 2);
  CHECK(rvqa_matrix_cols(m) == 3);
  CHECK(values_of(m) == std::vector<double>(values, values + 6));
  double small[2];
  CHECK(rvqa_matrix_values(m, small, 2) == RVQA_ERR_USAGE);
  CHECK(std::string(rvqa_last_error()).find("6") != std::string::npos);
  rvqa_matrix_free(m);
  rvqa_matrix_free(nullptr);
}

TEST_CASE("null arguments are usage errors and leave outputs untouched") {
  rvqa_matrix* m = reinterpret_cast<rvqa_matrix*>(0x1);
  CHECK(rvqa_matrix_create(2, 2, nullptr, &m) == RVQA_ERR_USAGE);
  CHECK(m == reinterpret_cast<rvqa_matrix*>(0x1));
  CHECK(rvqa_matrix_load(nullptr, &m) == RVQA_ERR_USAGE);
  CHECK(rvqa_model_load("x.rvqc", nullptr) == RVQA_ERR_USAGE);
  CHECK(rvqa_encode(nullptr, nullptr, nullptr) == RVQA_ERR_USAGE);
  CHECK(rvqa_run_experiment(nullptr, "c.json", nullptr) == RVQA_ERR_USAGE);
  CHECK(std::strlen(rvqa_last_error()) > 0);
  CHECK(rvqa_units_code(nullptr, 0, 0) == UINT32_MAX);
  CHECK(std::isnan(rvqa_model_train_mse(nullptr, 1)));
}

TEST_CASE("missing files are data errors naming the path") {
  rvqa_matrix* m = nullptr;
  CHECK(rvqa_matrix_load("/nonexistent/frames.npy", &m) == RVQA_ERR_DATA);
  CHECK(m == nullptr);
  CHECK(std::string(rvqa_last_error()).find("/nonexistent/frames.npy") != std::string::npos);
  rvqa_model* model = nullptr;
  CHECK(rvqa_model_load("/nonexistent/books.rvqc", &model) == RVQA_ERR_DATA);
  CHECK(std::string(rvqa_last_error()).find("books.rvqc") != std::string::npos);
}

TEST_CASE("rvq fit, encode and decode agree with the core library") {
  const Matrix data = gaussian_mixture(400, 5, 6, 21);
  rvqa_kmeans_params params;
  rvqa_kmeans_params_default(&params);
  params.seed = 17;
  params.restarts = 2;

  KMeansParams core_params;
  core_params.seed = 17;
  core_params.restarts = 2;
  core_params.max_iters = params.max_iters;
  core_params.tol = params.tol;
  const RvqModel core = rvq_fit(FrameSequence{data, ""}, 3, 8, core_params);

  rvqa_matrix* frames = to_c(data);
  rvqa_model* model = nullptr;
  REQUIRE(rvqa_rvq_fit(frames, 3, 8, &params, &model) == RVQA_OK);
  CHECK(rvqa_model_stages(model) == 3);
  CHECK(rvqa_model_codebook_size(model) == 8);
  CHECK(rvqa_model_dim(model) == 5);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(core.codebooks()[i].centroids.data() ==
          rvq_fit(FrameSequence{data, ""}, 3, 8, core_params).codebooks()[i].centroids.data());
    CHECK(rvqa_model_train_mse(model, i + 1) == core.train_stats()[i]);
  }
  CHECK(std::isnan(rvqa_model_train_mse(model, 4)));

  const UnitSequence core_units = encode(core, FrameSequence{data, ""});
  rvqa_units* units = nullptr;
  REQUIRE(rvqa_encode(model, frames, &units) == RVQA_OK);
  REQUIRE(rvqa_units_frames(units) == 400);
  REQUIRE(rvqa_units_stages(units) == 3);
  for (std::size_t t = 0; t < 400; ++t) {
    for (std::size_t s = 0; s < 3; ++s) CHECK(rvqa_units_code(units, t, s) == core_units.at(t, s));
  }
  CHECK(rvqa_units_code(units, 400, 0) == UINT32_MAX);

  rvqa_matrix* decoded = nullptr;
  REQUIRE(rvqa_decode(model, units, &decoded) == RVQA_OK);
  CHECK(values_of(decoded) == decode(core, core_units).values.data());

  rvqa_matrix* residual = nullptr;
  REQUIRE(rvqa_residual(model, frames, 2, &residual) == RVQA_OK);
  CHECK(values_of(residual) == rvqa::residual(core, FrameSequence{data, ""}, 2).values.data());
  CHECK(rvqa_residual(model, frames, 4, &residual) != RVQA_OK);

  rvqa_matrix_free(residual);
  rvqa_matrix_free(decoded);
  rvqa_units_free(units);
  rvqa_model_free(model);
  rvqa_matrix_free(frames);
}

TEST_CASE("kmeans fit equals a one-stage rvq and reports wcss") {
  const Matrix data = gaussian_mixture(200, 3, 4, 5);
  rvqa_kmeans_params params;
  rvqa_kmeans_params_default(&params);
  params.seed = 8;
  rvqa_matrix* frames = to_c(data);
  rvqa_model *km = nullptr, *rvq = nullptr;
  double wcss = -1.0;
  REQUIRE(rvqa_kmeans_fit(frames, 4, &params, &km, &wcss) == RVQA_OK);
  REQUIRE(rvqa_rvq_fit(frames, 1, 4, &params, &rvq) == RVQA_OK);
  const fs::path a = scratch("km.rvqc"), b = scratch("rvq.rvqc");
  REQUIRE(rvqa_model_save(km, a.c_str()) == RVQA_OK);
  REQUIRE(rvqa_model_save(rvq, b.c_str()) == RVQA_OK);
  CHECK(read_bytes(a) == read_bytes(b));

  // Independent WCSS of the saved centroids.
  const RvqModel loaded = load_model(a);
  double expected = 0.0;
  for (std::size_t t = 0; t < data.rows(); ++t) {
    double best = INFINITY;
    for (std::size_t j = 0; j < 4; ++j) {
      best = std::min(best, squared_distance(data.row(t), loaded.codebooks()[0].centroids.row(j)));
    }
    expected += best;
  }
  CHECK(wcss == doctest::Approx(expected).epsilon(1e-6));
  rvqa_model_free(km);
  rvqa_model_free(rvq);
  rvqa_matrix_free(frames);
}

TEST_CASE("units save, load and truncate through files") {
  const Matrix data = gaussian_mixture(50, 2, 3, 9);
  rvqa_kmeans_params params;
  rvqa_kmeans_params_default(&params);
  params.seed = 2;
  rvqa_matrix* frames = to_c(data);
  rvqa_model* model = nullptr;
  REQUIRE(rvqa_rvq_fit(frames, 3, 5, &params, &model) == RVQA_OK);
  rvqa_units *units = nullptr, *loaded = nullptr, *cut = nullptr;
  REQUIRE(rvqa_encode(model, frames, &units) == RVQA_OK);
  const fs::path path = scratch("u.rvqu");
  REQUIRE(rvqa_units_save(units, path.c_str()) == RVQA_OK);
  CHECK(fs::file_size(path) == kBitstreamHeaderBytes + payload_bytes(50, 3, 5));
  REQUIRE(rvqa_units_load(path.c_str(), &loaded) == RVQA_OK);
  CHECK(rvqa_units_codebook_size(loaded) == 5);
  REQUIRE(rvqa_units_truncate(loaded, 2, &cut) == RVQA_OK);
  CHECK(rvqa_units_stages(cut) == 2);
  for (std::size_t t = 0; t < 50; ++t) {
    for (std::size_t s = 0; s < 3; ++s) {
      CHECK(rvqa_units_code(loaded, t, s) == rvqa_units_code(units, t, s));
      if (s < 2) CHECK(rvqa_units_code(cut, t, s) == rvqa_units_code(units, t, s));
    }
  }
  CHECK(rvqa_units_truncate(units, 4, &cut) == RVQA_ERR_USAGE);

  auto bytes = read_bytes(path);
  bytes.pop_back();
  write_bytes(path, bytes);
  rvqa_units* broken = nullptr;
  CHECK(rvqa_units_load(path.c_str(), &broken) == RVQA_ERR_DATA);
  CHECK(broken == nullptr);

  rvqa_units_free(cut);
  rvqa_units_free(loaded);
  rvqa_units_free(units);
  rvqa_model_free(model);
  rvqa_matrix_free(frames);
}

TEST_CASE("decode rejects units from a different codebook size") {
  const Matrix data = gaussian_mixture(40, 2, 3, 4);
  rvqa_kmeans_params params;
  rvqa_kmeans_params_default(&params);
  rvqa_matrix* frames = to_c(data);
  rvqa_model *a = nullptr, *b = nullptr;
  REQUIRE(rvqa_rvq_fit(frames, 1, 4, &params, &a) == RVQA_OK);
  REQUIRE(rvqa_rvq_fit(frames, 1, 8, &params, &b) == RVQA_OK);
  rvqa_units* units = nullptr;
  REQUIRE(rvqa_encode(a, frames, &units) == RVQA_OK);
  rvqa_matrix* out = nullptr;
  CHECK(rvqa_decode(b, units, &out) == RVQA_ERR_DATA);
  CHECK(out == nullptr);
  rvqa_units_free(units);
  rvqa_model_free(a);
  rvqa_model_free(b);
  rvqa_matrix_free(frames);
}

TEST_CASE("matrix files round trip in both formats") {
  const double values[] = {0.5, -1.25, 3.0, 4.5};
  rvqa_matrix* m = nullptr;
  REQUIRE(rvqa_matrix_create(2, 2, values, &m) == RVQA_OK);
  for (const char* name : {"m.npy", "m.f32"}) {
    const fs::path path = scratch(name);
    REQUIRE(rvqa_matrix_save(m, path.c_str(), "demo") == RVQA_OK);
    rvqa_matrix* back = nullptr;
    REQUIRE(rvqa_matrix_load(path.c_str(), &back) == RVQA_OK);
    CHECK(values_of(back) == values_of(m));
    rvqa_matrix_free(back);
  }
  rvqa_matrix_free(m);
}

TEST_CASE("log mel of a silent file sits at the floor") {
  AudioBuffer audio;
  audio.sample_rate = 16000;
  audio.samples.assign(16000, 0.0);
  const fs::path path = scratch("silence.wav");
  write_bytes(path, encode_wav_pcm16(audio));
  rvqa_mel_config config;
  rvqa_mel_config_default(&config);
  CHECK(config.n_mels == 80);
  rvqa_matrix* mel = nullptr;
  REQUIRE(rvqa_log_mel_wav(path.c_str(), &config, &mel) == RVQA_OK);
  CHECK(rvqa_matrix_rows(mel) == 50);
  CHECK(rvqa_matrix_cols(mel) == 80);
  for (double v : values_of(mel)) CHECK(v == std::log(1e-10));
  rvqa_matrix_free(mel);

  config.n_mels = 0;
  CHECK(rvqa_log_mel_wav(path.c_str(), &config, &mel) == RVQA_ERR_USAGE);
}

TEST_CASE("experiments run from JSON text") {
  const fs::path dir = scratch("exp");
  fs::create_directories(dir);
  {
    std::FILE* f = std::fopen((dir / "scores.csv").c_str(), "w");
    REQUIRE(f);
    std::fputs("score,genuine\n0.9,1\n0.4,1\n0.6,0\n0.1,0\n", f);
    std::fclose(f);
  }
  const std::string config = R"({"output_dir": "out", "inputs": {"scores": "scores.csv"}})";
  char* report = nullptr;
  REQUIRE(rvqa_run_experiment_json("eer", config.c_str(), dir.c_str(), &report) == RVQA_OK);
  const auto j = nlohmann::json::parse(report);
  rvqa_string_free(report);
  CHECK(j["eer_percent"] == 25.0);
  CHECK(fs::exists(dir / "out" / "eer.json"));

  CHECK(rvqa_run_experiment_json("eer", "{\"bogus\": 1}", dir.c_str(), nullptr) == RVQA_ERR_USAGE);
  CHECK(std::string(rvqa_last_error()).find("bogus") != std::string::npos);
  CHECK(rvqa_run_experiment_json("eer", "{not json", dir.c_str(), nullptr) == RVQA_ERR_USAGE);
  CHECK(rvqa_run_experiment_json("no-such", config.c_str(), dir.c_str(), nullptr) ==
        RVQA_ERR_USAGE);
  CHECK(rvqa_run_experiment("eer", (dir / "missing.json").c_str(), nullptr) == RVQA_ERR_DATA);
}

TEST_CASE("version string is set") { CHECK(std::string(rvqa_version()) == "0.1.0"); }
