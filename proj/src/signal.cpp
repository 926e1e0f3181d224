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

#include "rvqa/signal.hpp"

#include <algorithm>
#include <cmath>

namespace rvqa {

void MelConfig::validate() const {
  if (sample_rate <= 0) throw UsageError("sample_rate must be positive");
  if (n_fft < 2) throw UsageError("n_fft must be at least 2");
  if (hop < 1 || hop > n_fft) throw UsageError("hop must be in [1, n_fft]");
  if (n_mels < 1) throw UsageError("n_mels must be at least 1");
  if (window != "hann") throw UsageError("unsupported window '" + window + "'");
  if (!(log_floor > 0.0)) throw UsageError("log_floor must be positive");
  const double hi = upper_hz();
  if (!(f_min >= 0.0 && f_min < hi && hi <= sample_rate / 2.0)) {
    throw UsageError("mel band limits must satisfy 0 <= f_min < f_max <= sample_rate/2");
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

double mel_center_hz(const MelConfig& config, int m) {
  const double lo = hz_to_mel(config.f_min);
  const double hi = hz_to_mel(config.upper_hz());
  return mel_to_hz(lo + (m + 1) * (hi - lo) / (config.n_mels + 1));
}

std::vector<double> periodic_hann(int length) {
  std::vector<double> w(length);
  for (int n = 0; n < length; ++n) w[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / length);
  return w;
}

std::size_t frame_count(std::size_t samples, int hop) {
  return (samples + static_cast<std::size_t>(hop) - 1) / static_cast<std::size_t>(hop);
}

namespace {

bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

void dft(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  std::vector<double> out_re(n, 0.0), out_im(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t t = 0; t < n; ++t) {
      const double angle = -2.0 * M_PI * static_cast<double>((k * t) % n) / n;
      out_re[k] += re[t] * std::cos(angle) - im[t] * std::sin(angle);
      out_im[k] += re[t] * std::sin(angle) + im[t] * std::cos(angle);
    }
  }
  re.swap(out_re);
  im.swap(out_im);
}

// Index into the reflect-padded signal; mirrors without repeating the edge.
std::size_t reflect_index(long i, std::size_t len) {
  if (len == 1) return 0;
  const long period = 2 * static_cast<long>(len - 1);
  long j = i % period;
  if (j < 0) j += period;
  if (j >= static_cast<long>(len)) j = period - j;
  return static_cast<std::size_t>(j);
}

}  // namespace

void fft(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  if (!is_power_of_two(n)) {
    dft(re, im);
    return;
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles evaluated directly rather than by recurrence to keep error flat.
      const double angle = -2.0 * M_PI * static_cast<double>(k) / len;
      const double wr = std::cos(angle), wi = std::sin(angle);
      for (std::size_t i = k; i < n; i += len) {
        const std::size_t j = i + half;
        const double tr = re[j] * wr - im[j] * wi;
        const double ti = re[j] * wi + im[j] * wr;
        re[j] = re[i] - tr;
        im[j] = im[i] - ti;
        re[i] += tr;
        im[i] += ti;
      }
    }
  }
}

Matrix stft_power(const AudioBuffer& audio, const MelConfig& config) {
  config.validate();
  if (audio.samples.empty()) throw DataError("empty input");
  if (audio.sample_rate != config.sample_rate) {
    throw DataError("sample rate mismatch: audio " + std::to_string(audio.sample_rate) +
                    " Hz, config " + std::to_string(config.sample_rate) + " Hz");
  }
  for (double s : audio.samples) {
    if (!std::isfinite(s)) throw DataError("non-finite audio sample");
  }

  const std::size_t len = audio.samples.size();
  const std::size_t frames = frame_count(len, config.hop);
  const int n_fft = config.n_fft;
  const long pad = n_fft / 2;
  const auto window = periodic_hann(n_fft);
  Matrix power(frames, config.bins());

  parallel_for(frames, [&](std::size_t begin, std::size_t end) {
    std::vector<double> re(n_fft), im(n_fft);
    for (std::size_t t = begin; t < end; ++t) {
      const long start = static_cast<long>(t) * config.hop - pad;
      for (int n = 0; n < n_fft; ++n) {
        re[n] = audio.samples[reflect_index(start + n, len)] * window[n];
        im[n] = 0.0;
      }
      fft(re, im);
      auto out = power.row(t);
      for (int k = 0; k < config.bins(); ++k) out[k] = re[k] * re[k] + im[k] * im[k];
    }
  });
  return power;
}

Matrix mel_filterbank(const MelConfig& config) {
  config.validate();
  const int bins = config.bins();
  const double lo = hz_to_mel(config.f_min);
  const double hi = hz_to_mel(config.upper_hz());
  std::vector<double> edges(config.n_mels + 2);
  for (int i = 0; i < config.n_mels + 2; ++i) {
    edges[i] = mel_to_hz(lo + i * (hi - lo) / (config.n_mels + 1));
  }

  Matrix fb(config.n_mels, bins);
  for (int m = 0; m < config.n_mels; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    double total = 0.0;
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * config.sample_rate / config.n_fft;
      const double up = (f - left) / (centre - left);
      const double down = (right - f) / (right - centre);
      const double w = std::max(0.0, std::min(up, down));
      fb(m, k) = w;
      total += w;
    }
    if (total <= 0.0) {
      throw UsageError("degenerate filterbank: mel band " + std::to_string(m) +
                       " covers no FFT bin");
    }
  }
  return fb;
}

MelSpectrogram log_mel(const AudioBuffer& audio, const MelConfig& config) {
  const Matrix power = stft_power(audio, config);
  const Matrix fb = mel_filterbank(config);
  MelSpectrogram out;
  out.frame_rate = static_cast<double>(config.sample_rate) / config.hop;
  out.values = Matrix(power.rows(), config.n_mels);
  for (std::size_t t = 0; t < power.rows(); ++t) {
    auto p = power.row(t);
    for (int m = 0; m < config.n_mels; ++m) {
      auto w = fb.row(m);
      double e = 0.0;
      for (std::size_t k = 0; k < p.size(); ++k) e += w[k] * p[k];
      out.values(t, m) = std::log(std::max(e, config.log_floor));
    }
  }
  return out;
}

}  // namespace rvqa
