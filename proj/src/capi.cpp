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

#include "rvqa/rvqa.h"

#include <cmath>
#include <cstring>
#include <limits>
#include <new>
#include <string>

#include "rvqa/bitstream.hpp"
#include "rvqa/experiment.hpp"
#include "rvqa/io.hpp"
#include "rvqa/quantizer.hpp"
#include "rvqa/signal.hpp"

struct rvqa_matrix {
  rvqa::Matrix values;
};

struct rvqa_model {
  rvqa::RvqModel model;
};

struct rvqa_units {
  rvqa::UnitSequence units;
};

namespace {

thread_local std::string last_error;

rvqa_status fail(rvqa_status status, const std::string& message) {
  last_error = message;
  return status;
}

/// Runs `fn`, mapping library exceptions to status codes.
template <typename Fn>
rvqa_status guard(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return RVQA_OK;
  } catch (const rvqa::UsageError& e) {
    return fail(RVQA_ERR_USAGE, e.what());
  } catch (const rvqa::DataError& e) {
    return fail(RVQA_ERR_DATA, e.what());
  } catch (const rvqa::NumericError& e) {
    return fail(RVQA_ERR_NUMERIC, e.what());
  } catch (const std::bad_alloc&) {
    return fail(RVQA_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(RVQA_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(RVQA_ERR_INTERNAL, "unknown error");
  }
}

void require(const void* p, const char* what) {
  if (!p) throw rvqa::UsageError(std::string(what) + " is NULL");
}

rvqa::KMeansParams kmeans_params(const rvqa_kmeans_params* p) {
  rvqa::KMeansParams out;
  if (p) {
    out.max_iters = p->max_iters;
    out.tol = p->tol;
    out.restarts = p->restarts;
    out.seed = p->seed;
  }
  return out;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* rvqa_last_error(void) { return last_error.c_str(); }

const char* rvqa_version(void) { return "0.1.0"; }

rvqa_status rvqa_matrix_create(size_t rows, size_t cols, const double* values, rvqa_matrix** out) {
  return guard([&] {
    require(out, "out");
    if (rows * cols > 0) require(values, "values");
    auto* m = new rvqa_matrix{rvqa::Matrix(rows, cols, std::vector<double>(values, values + rows * cols))};
    *out = m;
  });
}

rvqa_status rvqa_matrix_load(const char* path, rvqa_matrix** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new rvqa_matrix{rvqa::read_matrix(path).values};
  });
}

rvqa_status rvqa_matrix_save(const rvqa_matrix* m, const char* path, const char* tag) {
  return guard([&] {
    require(m, "matrix");
    require(path, "path");
    rvqa::write_matrix(path, m->values, tag ? tag : "");
  });
}

size_t rvqa_matrix_rows(const rvqa_matrix* m) { return m ? m->values.rows() : 0; }

size_t rvqa_matrix_cols(const rvqa_matrix* m) { return m ? m->values.cols() : 0; }

rvqa_status rvqa_matrix_values(const rvqa_matrix* m, double* out, size_t count) {
  return guard([&] {
    require(m, "matrix");
    if (count < m->values.size()) {
      throw rvqa::UsageError("output buffer holds " + std::to_string(count) + " values, matrix has " +
                             std::to_string(m->values.size()));
    }
    if (m->values.size() > 0) require(out, "out");
    std::copy(m->values.data().begin(), m->values.data().end(), out);
  });
}

void rvqa_matrix_free(rvqa_matrix* m) { delete m; }

void rvqa_mel_config_default(rvqa_mel_config* config) {
  if (!config) return;
  const rvqa::MelConfig d;
  config->sample_rate = d.sample_rate;
  config->n_fft = d.n_fft;
  config->hop = d.hop;
  config->n_mels = d.n_mels;
  config->f_min = d.f_min;
  config->f_max = 0.0;
}

rvqa_status rvqa_log_mel_wav(const char* wav_path, const rvqa_mel_config* config, rvqa_matrix** out) {
  return guard([&] {
    require(wav_path, "wav_path");
    require(out, "out");
    rvqa::MelConfig c;
    if (config) {
      c.sample_rate = config->sample_rate;
      c.n_fft = config->n_fft;
      c.hop = config->hop;
      c.n_mels = config->n_mels;
      c.f_min = config->f_min;
      if (config->f_max > 0.0) c.f_max = config->f_max;
    }
    *out = new rvqa_matrix{rvqa::log_mel(rvqa::read_wav(wav_path), c).values};
  });
}

void rvqa_kmeans_params_default(rvqa_kmeans_params* params) {
  if (!params) return;
  const rvqa::KMeansParams d;
  params->max_iters = d.max_iters;
  params->tol = d.tol;
  params->restarts = d.restarts;
  params->seed = d.seed;
}

rvqa_status rvqa_kmeans_fit(const rvqa_matrix* data, size_t k, const rvqa_kmeans_params* params,
                            rvqa_model** out, double* wcss) {
  return guard([&] {
    require(data, "data");
    require(out, "out");
    // A one-stage RVQ, so fit-kmeans and fit-rvq -L 1 agree exactly.
    auto* m = new rvqa_model{rvqa::rvq_fit(rvqa::FrameSequence{data->values, ""}, 1, k, kmeans_params(params))};
    if (wcss) *wcss = m->model.train_stats().front() * static_cast<double>(data->values.rows());
    *out = m;
  });
}

rvqa_status rvqa_rvq_fit(const rvqa_matrix* data, size_t stages, size_t codebook_size,
                         const rvqa_kmeans_params* params, rvqa_model** out) {
  return guard([&] {
    require(data, "data");
    require(out, "out");
    *out = new rvqa_model{rvqa::rvq_fit(rvqa::FrameSequence{data->values, ""}, stages, codebook_size,
                                        kmeans_params(params))};
  });
}

rvqa_status rvqa_model_load(const char* path, rvqa_model** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new rvqa_model{rvqa::load_model(path)};
  });
}

rvqa_status rvqa_model_save(const rvqa_model* model, const char* path) {
  return guard([&] {
    require(model, "model");
    require(path, "path");
    rvqa::save_model(path, model->model);
  });
}

size_t rvqa_model_stages(const rvqa_model* model) { return model ? model->model.stages() : 0; }

size_t rvqa_model_codebook_size(const rvqa_model* model) {
  return model ? model->model.codebook_size() : 0;
}

size_t rvqa_model_dim(const rvqa_model* model) { return model ? model->model.dim() : 0; }

double rvqa_model_train_mse(const rvqa_model* model, size_t stage) {
  if (!model || stage == 0 || stage > model->model.train_stats().size()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return model->model.train_stats()[stage - 1];
}

void rvqa_model_free(rvqa_model* model) { delete model; }

rvqa_status rvqa_encode(const rvqa_model* model, const rvqa_matrix* frames, rvqa_units** out) {
  return guard([&] {
    require(model, "model");
    require(frames, "frames");
    require(out, "out");
    *out = new rvqa_units{rvqa::encode(model->model, rvqa::FrameSequence{frames->values, ""})};
  });
}

rvqa_status rvqa_decode(const rvqa_model* model, const rvqa_units* units, rvqa_matrix** out) {
  return guard([&] {
    require(model, "model");
    require(units, "units");
    require(out, "out");
    if (units->units.codebook_size != model->model.codebook_size()) {
      throw rvqa::DataError("units use N=" + std::to_string(units->units.codebook_size) +
                            ", codebooks have N=" + std::to_string(model->model.codebook_size()));
    }
    *out = new rvqa_matrix{rvqa::decode(model->model, units->units).values};
  });
}

rvqa_status rvqa_residual(const rvqa_model* model, const rvqa_matrix* frames, size_t stages,
                          rvqa_matrix** out) {
  return guard([&] {
    require(model, "model");
    require(frames, "frames");
    require(out, "out");
    *out = new rvqa_matrix{rvqa::residual(model->model, rvqa::FrameSequence{frames->values, ""}, stages).values};
  });
}

rvqa_status rvqa_units_truncate(const rvqa_units* units, size_t stages, rvqa_units** out) {
  return guard([&] {
    require(units, "units");
    require(out, "out");
    *out = new rvqa_units{rvqa::truncate(units->units, stages)};
  });
}

rvqa_status rvqa_units_save(const rvqa_units* units, const char* path) {
  return guard([&] {
    require(units, "units");
    require(path, "path");
    rvqa::write_bytes(path, rvqa::pack(units->units));
  });
}

rvqa_status rvqa_units_load(const char* path, rvqa_units** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    const auto bytes = rvqa::read_bytes(path);
    try {
      *out = new rvqa_units{rvqa::unpack(bytes)};
    } catch (const rvqa::DataError& e) {
      throw rvqa::DataError(std::string(path) + ": " + e.what());
    }
  });
}

size_t rvqa_units_frames(const rvqa_units* units) { return units ? units->units.frames : 0; }

size_t rvqa_units_stages(const rvqa_units* units) { return units ? units->units.stages : 0; }

size_t rvqa_units_codebook_size(const rvqa_units* units) {
  return units ? units->units.codebook_size : 0;
}

uint32_t rvqa_units_code(const rvqa_units* units, size_t t, size_t stage) {
  if (!units || t >= units->units.frames || stage >= units->units.stages) return UINT32_MAX;
  return units->units.at(t, stage);
}

void rvqa_units_free(rvqa_units* units) { delete units; }

rvqa_status rvqa_run_experiment(const char* command, const char* config_path, char** report_json) {
  return guard([&] {
    require(command, "command");
    require(config_path, "config_path");
    const auto report = rvqa::run_experiment_file(command, config_path);
    if (report_json) *report_json = copy_string(report.dump(2));
  });
}

rvqa_status rvqa_run_experiment_json(const char* command, const char* config_json,
                                     const char* base_dir, char** report_json) {
  return guard([&] {
    require(command, "command");
    require(config_json, "config_json");
    nlohmann::json config;
    try {
      config = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::parse_error& e) {
      throw rvqa::UsageError(std::string("config is not valid JSON: ") + e.what());
    }
    const auto report = rvqa::run_experiment(command, config, base_dir ? base_dir : ".");
    if (report_json) *report_json = copy_string(report.dump(2));
  });
}

void rvqa_string_free(char* s) { std::free(s); }

}  // extern "C"
