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

#include <optional>
#include <string>
#include <vector>

#include "rvqa/common.hpp"

namespace rvqa {

struct AudioBuffer {
  std::vector<double> samples;  // amplitude in [-1, 1]
  int sample_rate = 16000;
};

/// Framing for log-Mel targets. Defaults give 50 Hz frames at 16 kHz.
struct MelConfig {
  int sample_rate = 16000;
  int n_fft = 1024;
  int hop = 320;
  int n_mels = 80;
  double f_min = 0.0;
  std::optional<double> f_max;  // sample_rate / 2 when unset
  std::string window = "hann";  // periodic Hann; the only supported window
  double log_floor = 1e-10;

  double upper_hz() const { return f_max.value_or(sample_rate / 2.0); }
  int bins() const { return n_fft / 2 + 1; }
  void validate() const;
};

struct MelSpectrogram {
  Matrix values;  // T x n_mels, natural-log power
  double frame_rate = 0.0;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Center frequency (Hz) of filter m, 0-based.
double mel_center_hz(const MelConfig& config, int m);

std::vector<double> periodic_hann(int length);

/// Number of frames for `samples` input samples: ceil(samples / hop).
std::size_t frame_count(std::size_t samples, int hop);

/// Power spectrogram, T x (n_fft/2 + 1). Frame t is centred on sample t*hop
/// with reflect padding of n_fft/2 samples on both sides.
Matrix stft_power(const AudioBuffer& audio, const MelConfig& config);

/// n_mels x (n_fft/2 + 1) triangular filters, peak weight 1 at each centre.
Matrix mel_filterbank(const MelConfig& config);

/// ln(max(filterbank * power, log_floor)); no normalisation is applied.
MelSpectrogram log_mel(const AudioBuffer& audio, const MelConfig& config);

/// In-place complex FFT of length re.size(); power-of-two lengths use radix-2,
/// anything else falls back to a direct DFT.
void fft(std::vector<double>& re, std::vector<double>& im);

}  // namespace rvqa
