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

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "rvqa/signal.hpp"

using namespace rvqa;

namespace {

AudioBuffer tone(double hz, std::size_t n, double amplitude = 1.0, int rate = 16000) {
  AudioBuffer a;
  a.sample_rate = rate;
  a.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) a.samples[i] = amplitude * std::cos(2.0 * M_PI * hz * i / rate);
  return a;
}

}  // namespace

TEST_CASE("stft of silence is all zeros") {
  AudioBuffer a{std::vector<double>(3200, 0.0), 16000};
  const Matrix p = stft_power(a, MelConfig{});
  CHECK(p.rows() == 10);
  CHECK(p.cols() == 513);
  for (double v : p.data()) CHECK(v == 0.0);
}

TEST_CASE("bin-aligned 500 Hz tone concentrates power at bin 32") {
  // A unit cosine at bin k under a periodic Hann window has |X_k|^2 = (N/4)^2,
  // |X_{k+-1}|^2 = (N/8)^2 and exactly zero elsewhere.
  const MelConfig cfg;
  const Matrix p = stft_power(tone(500.0, 16000), cfg);
  const double peak_expected = 1024.0 * 1024.0 / 16.0;
  // Frames whose window lies entirely inside the signal.
  for (std::size_t t = 2; t + 2 < p.rows(); ++t) {
    CHECK(p(t, 32) == doctest::Approx(peak_expected).epsilon(1e-9));
    CHECK(p(t, 31) == doctest::Approx(peak_expected / 4.0).epsilon(1e-9));
    for (std::size_t k = 0; k < p.cols(); ++k) {
      if (k >= 31 && k <= 33) continue;
      CHECK(10.0 * std::log10(p(t, k) / p(t, 32) + 1e-300) <= -60.0);
    }
  }
}

TEST_CASE("framewise Parseval identity") {
  MelConfig cfg;
  AudioBuffer a{std::vector<double>(5000), 16000};
  std::uint64_t s = 12345;
  for (double& v : a.samples) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    v = static_cast<double>(s >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  }
  const Matrix p = stft_power(a, cfg);
  const auto w = periodic_hann(cfg.n_fft);
  const long pad = cfg.n_fft / 2;
  for (std::size_t t : {std::size_t{3}, std::size_t{7}, std::size_t{12}}) {
    double energy = 0.0;
    for (int n = 0; n < cfg.n_fft; ++n) {
      const double x = a.samples[static_cast<std::size_t>(static_cast<long>(t) * cfg.hop - pad + n)] * w[n];
      energy += x * x;
    }
    double spectrum = p(t, 0) + p(t, cfg.n_fft / 2);
    for (int k = 1; k < cfg.n_fft / 2; ++k) spectrum += 2.0 * p(t, k);
    CHECK(spectrum / cfg.n_fft == doctest::Approx(energy).epsilon(1e-6));
  }
}

TEST_CASE("stft errors") {
  CHECK_THROWS_WITH_AS(stft_power(AudioBuffer{{}, 16000}, MelConfig{}), "empty input", DataError);
  CHECK_THROWS_AS(stft_power(AudioBuffer{{0.0, 0.1}, 8000}, MelConfig{}), DataError);
}

TEST_CASE("frame-count law over random lengths") {
  MelConfig cfg;
  std::uint64_t s = 99;
  for (int i = 0; i < 25; ++i) {
    s = s * 6364136223846793005ULL + 1;
    const std::size_t len = 1 + (s >> 33) % 9000;
    const Matrix p = stft_power(AudioBuffer{std::vector<double>(len, 0.01), 16000}, cfg);
    CHECK(p.rows() == (len + 319) / 320);
  }
}

TEST_CASE("mel filterbank shape and centres") {
  const MelConfig cfg;
  const Matrix fb = mel_filterbank(cfg);
  CHECK(fb.rows() == 80);
  CHECK(fb.cols() == 513);
  for (std::size_t m = 0; m < fb.rows(); ++m) {
    double total = 0.0;
    for (double w : fb.row(m)) {
      CHECK(w >= 0.0);
      total += w;
    }
    CHECK(total > 0.0);
  }
  // Frozen from mel^-1(mel(0) + (m+1)(mel(8000) - mel(0))/81) evaluated independently.
  CHECK(mel_center_hz(cfg, 0) == doctest::Approx(22.120065726919712).epsilon(1e-12));
  CHECK(mel_center_hz(cfg, 40) == doctest::Approx(1806.4805149500366).epsilon(1e-12));
  CHECK(mel_center_hz(cfg, 79) == doctest::Approx(7733.50058950311).epsilon(1e-12));
}

TEST_CASE("each filter rises to one peak and falls") {
  const Matrix fb = mel_filterbank(MelConfig{});
  for (std::size_t m = 0; m < fb.rows(); ++m) {
    auto row = fb.row(m);
    std::size_t k = 0;
    while (k + 1 < row.size() && row[k + 1] >= row[k]) ++k;
    while (k + 1 < row.size() && row[k + 1] <= row[k]) ++k;
    CHECK(k + 1 == row.size());
  }
}

TEST_CASE("tone at a filter centre lands in that band") {
  const MelConfig cfg;
  for (int m : {10, 25, 40, 60, 79}) {
    const MelSpectrogram mel = log_mel(tone(mel_center_hz(cfg, m), 16000), cfg);
    const std::size_t t = 20;
    auto row = mel.values.row(t);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    CHECK_MESSAGE(best == m, "filter " << m);
  }
}

TEST_CASE("degenerate filterbank is rejected") {
  MelConfig cfg;
  cfg.n_fft = 128;
  cfg.hop = 64;
  cfg.n_mels = 200;
  CHECK_THROWS_WITH_AS(mel_filterbank(cfg), doctest::Contains("degenerate filterbank"), UsageError);
}

TEST_CASE("log mel of silence sits at the floor") {
  const MelSpectrogram mel = log_mel(AudioBuffer{std::vector<double>(16000, 0.0), 16000}, MelConfig{});
  CHECK(mel.values.rows() == 50);
  CHECK(mel.frame_rate == 50.0);
  for (double v : mel.values.data()) CHECK(v == std::log(1e-10));
}

TEST_CASE("doubling amplitude adds ln 4 and never lowers an entry") {
  const MelConfig cfg;
  AudioBuffer a = tone(1234.5, 8000, 0.25);
  for (std::size_t i = 0; i < a.samples.size(); ++i) a.samples[i] += 0.1 * std::sin(0.37 * i);
  AudioBuffer b = a;
  for (double& v : b.samples) v *= 2.0;
  const Matrix x = log_mel(a, cfg).values;
  const Matrix y = log_mel(b, cfg).values;
  for (std::size_t k = 0; k < x.size(); ++k) {
    CHECK(y.data()[k] >= x.data()[k]);
    if (x.data()[k] > std::log(1e-10) + 1.0) {
      CHECK(y.data()[k] - x.data()[k] == doctest::Approx(std::log(4.0)).epsilon(1e-9));
    }
  }
}

TEST_CASE("log mel is deterministic") {
  const AudioBuffer a = tone(333.0, 7000, 0.5);
  CHECK(log_mel(a, MelConfig{}).values == log_mel(a, MelConfig{}).values);
}

TEST_CASE("invalid configs") {
  MelConfig c;
  c.hop = 2048;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = MelConfig{};
  c.f_max = 9000.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = MelConfig{};
  c.log_floor = 0.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = MelConfig{};
  c.window = "hamming";
  CHECK_THROWS_AS(c.validate(), UsageError);
}
