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

#ifndef RVQA_RVQA_H_
#define RVQA_RVQA_H_

// C interface to the rvqa library. Every function that can fail returns an
// rvqa_status; on failure rvqa_last_error() describes the problem. Objects
// are opaque handles released with the matching *_free function. Output
// handles are only written on success.

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define RVQA_API __declspec(dllexport)
#else
#define RVQA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rvqa_status {
  RVQA_OK = 0,
  RVQA_ERR_USAGE = 1,    // bad arguments or configuration
  RVQA_ERR_DATA = 2,     // unreadable, malformed or inconsistent input
  RVQA_ERR_NUMERIC = 3,  // divergence or other numerical failure
  RVQA_ERR_INTERNAL = 4  // anything else, including allocation failure
} rvqa_status;

typedef struct rvqa_matrix rvqa_matrix;
typedef struct rvqa_model rvqa_model;
typedef struct rvqa_units rvqa_units;

// Message for the last failed call on this thread ("" if none).
RVQA_API const char* rvqa_last_error(void);
RVQA_API const char* rvqa_version(void);

// ---- matrices (rows x cols, row-major)

RVQA_API rvqa_status rvqa_matrix_create(size_t rows, size_t cols, const double* values,
                                        rvqa_matrix** out);
// Reads .npy (v1.0, '<f4', C order, 2-D) or raw float32 with a
// "<path>.json" sidecar {rows, cols, tag}.
RVQA_API rvqa_status rvqa_matrix_load(const char* path, rvqa_matrix** out);
// Writes .npy when the path ends in ".npy", raw float32 plus sidecar
// otherwise. tag may be NULL.
RVQA_API rvqa_status rvqa_matrix_save(const rvqa_matrix* m, const char* path, const char* tag);
RVQA_API size_t rvqa_matrix_rows(const rvqa_matrix* m);
RVQA_API size_t rvqa_matrix_cols(const rvqa_matrix* m);
// Copies rows * cols values into out, which must hold `count` doubles.
RVQA_API rvqa_status rvqa_matrix_values(const rvqa_matrix* m, double* out, size_t count);
RVQA_API void rvqa_matrix_free(rvqa_matrix* m);

// ---- log-Mel features

typedef struct rvqa_mel_config {
  int sample_rate;
  int n_fft;
  int hop;
  int n_mels;
  double f_min;
  double f_max;  // <= 0 selects sample_rate / 2
} rvqa_mel_config;

RVQA_API void rvqa_mel_config_default(rvqa_mel_config* config);
// Mono 16-bit PCM or float32 WAV to a T x n_mels natural-log Mel matrix.
RVQA_API rvqa_status rvqa_log_mel_wav(const char* wav_path, const rvqa_mel_config* config,
                                      rvqa_matrix** out);

// ---- quantizers

typedef struct rvqa_kmeans_params {
  size_t max_iters;
  double tol;
  size_t restarts;
  uint64_t seed;
} rvqa_kmeans_params;

RVQA_API void rvqa_kmeans_params_default(rvqa_kmeans_params* params);
// k-means as a one-stage model, identical to rvqa_rvq_fit with one stage.
// wcss (sum over frames of squared distance to the centroid) may be NULL.
RVQA_API rvqa_status rvqa_kmeans_fit(const rvqa_matrix* data, size_t k,
                                     const rvqa_kmeans_params* params, rvqa_model** out,
                                     double* wcss);
RVQA_API rvqa_status rvqa_rvq_fit(const rvqa_matrix* data, size_t stages, size_t codebook_size,
                                  const rvqa_kmeans_params* params, rvqa_model** out);
RVQA_API rvqa_status rvqa_model_load(const char* path, rvqa_model** out);
RVQA_API rvqa_status rvqa_model_save(const rvqa_model* model, const char* path);
RVQA_API size_t rvqa_model_stages(const rvqa_model* model);
RVQA_API size_t rvqa_model_codebook_size(const rvqa_model* model);
RVQA_API size_t rvqa_model_dim(const rvqa_model* model);
// Training MSE after `stage` stages (1-based); NaN when unknown.
RVQA_API double rvqa_model_train_mse(const rvqa_model* model, size_t stage);
RVQA_API void rvqa_model_free(rvqa_model* model);

RVQA_API rvqa_status rvqa_encode(const rvqa_model* model, const rvqa_matrix* frames,
                                 rvqa_units** out);
RVQA_API rvqa_status rvqa_decode(const rvqa_model* model, const rvqa_units* units,
                                 rvqa_matrix** out);
// frames minus their reconstruction from the first `stages` stages.
RVQA_API rvqa_status rvqa_residual(const rvqa_model* model, const rvqa_matrix* frames,
                                   size_t stages, rvqa_matrix** out);

// ---- unit sequences

RVQA_API rvqa_status rvqa_units_truncate(const rvqa_units* units, size_t stages,
                                         rvqa_units** out);
// Packed bitstream files.
RVQA_API rvqa_status rvqa_units_save(const rvqa_units* units, const char* path);
RVQA_API rvqa_status rvqa_units_load(const char* path, rvqa_units** out);
RVQA_API size_t rvqa_units_frames(const rvqa_units* units);
RVQA_API size_t rvqa_units_stages(const rvqa_units* units);
RVQA_API size_t rvqa_units_codebook_size(const rvqa_units* units);
// Code of frame t at stage (0-based); UINT32_MAX when out of range.
RVQA_API uint32_t rvqa_units_code(const rvqa_units* units, size_t t, size_t stage);
RVQA_API void rvqa_units_free(rvqa_units* units);

// ---- experiments

// Config-driven commands: completeness, probe-phone, probe-pitch,
// probe-speaker, eer, finetune, rd-sweep, pca-export. Reports are written to
// the configured output directory; the command's JSON report is also
// returned in *report_json (release with rvqa_string_free) when report_json
// is not NULL. Relative paths resolve against the config file's folder.
RVQA_API rvqa_status rvqa_run_experiment(const char* command, const char* config_path,
                                         char** report_json);
// Same with the config given as JSON text; relative paths resolve against
// base_dir (the working directory when NULL).
RVQA_API rvqa_status rvqa_run_experiment_json(const char* command, const char* config_json,
                                              const char* base_dir, char** report_json);
RVQA_API void rvqa_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif  // RVQA_RVQA_H_
