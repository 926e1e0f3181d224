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

// Command-line front end. Talks to the library only through the C API.

#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rvqa/rvqa.h"

namespace {

// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
// failure. Internal errors are reported as numerical failures.
int exit_code(rvqa_status s) {
  switch (s) {
    case RVQA_OK: return 0;
    case RVQA_ERR_USAGE: return 1;
    case RVQA_ERR_DATA: return 2;
    default: return 3;
  }
}

struct Failure {
  rvqa_status status;
};

void check(rvqa_status s) {
  if (s != RVQA_OK) throw Failure{s};
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(ptr); }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};

using Matrix = Handle<rvqa_matrix, rvqa_matrix_free>;
using Model = Handle<rvqa_model, rvqa_model_free>;
using Units = Handle<rvqa_units, rvqa_units_free>;

void print_model(const rvqa_model* m) {
  std::printf("{\"stages\": %zu, \"codebook_size\": %zu, \"dim\": %zu, \"train_mse\": [",
              rvqa_model_stages(m), rvqa_model_codebook_size(m), rvqa_model_dim(m));
  for (std::size_t i = 1; i <= rvqa_model_stages(m); ++i) {
    const double v = rvqa_model_train_mse(m, i);
    if (std::isnan(v)) {
      std::printf("%snull", i > 1 ? ", " : "");
    } else {
      std::printf("%s%.17g", i > 1 ? ", " : "", v);
    }
  }
  std::printf("]}\n");
}

void add_kmeans_options(CLI::App* cmd, rvqa_kmeans_params& p) {
  cmd->add_option("--seed", p.seed, "random seed")->capture_default_str();
  cmd->add_option("--restarts", p.restarts, "k-means++ restarts per codebook")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--max-iters", p.max_iters, "Lloyd iteration limit")->capture_default_str();
  cmd->add_option("--tol", p.tol, "relative WCSS improvement to stop at")->capture_default_str()->check(CLI::NonNegativeNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rvqa: residual vector quantization of speech representations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", rvqa_version());

  // mel
  std::string wav, mel_out;
  rvqa_mel_config mel;
  rvqa_mel_config_default(&mel);
  auto* mel_cmd = app.add_subcommand("mel", "log-Mel spectrogram of a mono WAV file");
  mel_cmd->add_option("input", wav, "input WAV")->required();
  mel_cmd->add_option("-o,--output", mel_out, "output matrix (.npy or raw + sidecar)")->required();
  mel_cmd->add_option("--sample-rate", mel.sample_rate)->capture_default_str();
  mel_cmd->add_option("--n-fft", mel.n_fft)->capture_default_str();
  mel_cmd->add_option("--hop", mel.hop)->capture_default_str();
  mel_cmd->add_option("--n-mels", mel.n_mels)->capture_default_str();
  mel_cmd->add_option("--f-min", mel.f_min)->capture_default_str();
  mel_cmd->add_option("--f-max", mel.f_max, "upper edge in Hz (0 = Nyquist)")->capture_default_str();
  mel_cmd->callback([&] {
    Matrix m;
    check(rvqa_log_mel_wav(wav.c_str(), &mel, m.out()));
    check(rvqa_matrix_save(m.get(), mel_out.c_str(), "log-mel"));
  });

  // fit-kmeans
  std::string km_in, km_out;
  std::size_t km_k = 0;
  rvqa_kmeans_params km;
  rvqa_kmeans_params_default(&km);
  auto* km_cmd = app.add_subcommand("fit-kmeans", "k-means codebook (a one-stage RVQ)");
  km_cmd->add_option("input", km_in, "frames matrix")->required();
  km_cmd->add_option("-k,--clusters", km_k, "number of clusters")->required()->check(CLI::PositiveNumber);
  km_cmd->add_option("-o,--output", km_out, "codebook file")->required();
  add_kmeans_options(km_cmd, km);
  km_cmd->callback([&] {
    Matrix data;
    Model model;
    check(rvqa_matrix_load(km_in.c_str(), data.out()));
    check(rvqa_kmeans_fit(data.get(), km_k, &km, model.out(), nullptr));
    check(rvqa_model_save(model.get(), km_out.c_str()));
    print_model(model.get());
  });

  // fit-rvq
  std::string rvq_in, rvq_out;
  std::size_t rvq_stages = 8, rvq_n = 1024;
  rvqa_kmeans_params rvq_km;
  rvqa_kmeans_params_default(&rvq_km);
  auto* rvq_cmd = app.add_subcommand("fit-rvq", "residual vector quantizer codebooks");
  rvq_cmd->add_option("input", rvq_in, "frames matrix")->required();
  rvq_cmd->add_option("-L,--stages", rvq_stages, "number of codebooks")->capture_default_str()->check(CLI::PositiveNumber);
  rvq_cmd->add_option("-N,--codebook-size", rvq_n, "centroids per codebook")->capture_default_str()->check(CLI::PositiveNumber);
  rvq_cmd->add_option("-o,--output", rvq_out, "codebook file")->required();
  add_kmeans_options(rvq_cmd, rvq_km);
  rvq_cmd->callback([&] {
    Matrix data;
    Model model;
    check(rvqa_matrix_load(rvq_in.c_str(), data.out()));
    check(rvqa_rvq_fit(data.get(), rvq_stages, rvq_n, &rvq_km, model.out()));
    check(rvqa_model_save(model.get(), rvq_out.c_str()));
    print_model(model.get());
  });

  // encode
  std::string enc_model, enc_in, enc_out;
  std::size_t enc_stages = 0;
  auto* enc_cmd = app.add_subcommand("encode", "frames to a packed unit stream");
  enc_cmd->add_option("--model", enc_model, "codebook file")->required();
  enc_cmd->add_option("input", enc_in, "frames matrix")->required();
  enc_cmd->add_option("-o,--output", enc_out, "unit stream file")->required();
  enc_cmd->add_option("-L,--stages", enc_stages, "keep only the first L stages (0 = all)");
  enc_cmd->callback([&] {
    Model model;
    Matrix frames;
    Units units;
    check(rvqa_model_load(enc_model.c_str(), model.out()));
    check(rvqa_matrix_load(enc_in.c_str(), frames.out()));
    check(rvqa_encode(model.get(), frames.get(), units.out()));
    if (enc_stages > 0) {
      Units cut;
      check(rvqa_units_truncate(units.get(), enc_stages, cut.out()));
      check(rvqa_units_save(cut.get(), enc_out.c_str()));
    } else {
      check(rvqa_units_save(units.get(), enc_out.c_str()));
    }
  });

  // decode
  std::string dec_model, dec_in, dec_out;
  auto* dec_cmd = app.add_subcommand("decode", "unit stream to reconstructed frames");
  dec_cmd->add_option("--model", dec_model, "codebook file")->required();
  dec_cmd->add_option("input", dec_in, "unit stream file")->required();
  dec_cmd->add_option("-o,--output", dec_out, "output matrix")->required();
  dec_cmd->callback([&] {
    Model model;
    Units units;
    Matrix out;
    check(rvqa_model_load(dec_model.c_str(), model.out()));
    check(rvqa_units_load(dec_in.c_str(), units.out()));
    check(rvqa_decode(model.get(), units.get(), out.out()));
    check(rvqa_matrix_save(out.get(), dec_out.c_str(), "decoded"));
  });

  // residual
  std::string res_model, res_in, res_out;
  std::size_t res_stages = 0;
  auto* res_cmd = app.add_subcommand("residual", "frames minus their L-stage reconstruction");
  res_cmd->add_option("--model", res_model, "codebook file")->required();
  res_cmd->add_option("input", res_in, "frames matrix")->required();
  res_cmd->add_option("-L,--stages", res_stages, "stages removed")->required();
  res_cmd->add_option("-o,--output", res_out, "output matrix")->required();
  res_cmd->callback([&] {
    Model model;
    Matrix frames, out;
    check(rvqa_model_load(res_model.c_str(), model.out()));
    check(rvqa_matrix_load(res_in.c_str(), frames.out()));
    check(rvqa_residual(model.get(), frames.get(), res_stages, out.out()));
    check(rvqa_matrix_save(out.get(), res_out.c_str(), "residual"));
  });

  // config-driven experiments
  struct Experiment {
    const char* name;
    const char* help;
  };
  const Experiment experiments[] = {
      {"completeness", "probe MSE, SNR and bound from frames to log-Mels"},
      {"probe-phone", "frame-level phone classification error"},
      {"probe-pitch", "pitch RMSE on voiced frames"},
      {"probe-speaker", "speaker classification accuracy and trial EER"},
      {"eer", "equal error rate of scored trials"},
      {"finetune", "fine-tune codebooks against a completeness probe"},
      {"rd-sweep", "rate against distortion and accessibility over L"},
      {"pca-export", "first two principal components as CSV"},
  };
  std::string config_path;
  bool quiet = false;
  for (const auto& e : experiments) {
    auto* cmd = app.add_subcommand(e.name, e.help);
    cmd->add_option("-c,--config", config_path, "experiment config (JSON)")->required();
    cmd->add_flag("-q,--quiet", quiet, "do not print the report");
    const std::string name = e.name;
    cmd->callback([&, name] {
      char* report = nullptr;
      check(rvqa_run_experiment(name.c_str(), config_path.c_str(), &report));
      std::unique_ptr<char, void (*)(char*)> owned(report, rvqa_string_free);
      if (!quiet) std::printf("%s\n", report);
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const Failure& f) {
    std::fprintf(stderr, "rvqa: error: %s\n", rvqa_last_error());
    return exit_code(f.status);
  }
  return 0;
}
