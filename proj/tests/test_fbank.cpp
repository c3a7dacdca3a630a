// Copyright 2026 The crtrain Authors
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

#include "crtrain/fbank.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "crtrain/util.hpp"
#include "crtrain/wav.hpp"

namespace crtrain {
namespace {

Waveform sine_wave(double freq, double seconds, int sr, double amp = 0.5) {
  Waveform w;
  w.sample_rate = sr;
  size_t n = static_cast<size_t>(seconds * sr);
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    w.samples[i] = amp * std::sin(2.0 * M_PI * freq * i / sr);
  }
  return w;
}

TEST(MelFilterbank, RowsSumPositive) {
  Array fb = mel_filterbank(512, 32, 16000);
  for (size_t m = 0; m < 32; ++m) {
    double s = 0.0;
    for (size_t k = 0; k < fb.cols(); ++k) s += fb.at(m, k);
    EXPECT_GT(s, 0.0) << "filter " << m;
  }
}

TEST(MelFilterbank, PeaksMonotoneInFrequency) {
  Array fb = mel_filterbank(512, 8, 16000);
  size_t prev = 0;
  for (size_t m = 0; m < 8; ++m) {
    size_t best = 0;
    for (size_t k = 1; k < fb.cols(); ++k)
      if (fb.at(m, k) > fb.at(m, best)) best = k;
    if (m > 0) EXPECT_GT(best, prev) << "filter " << m;
    prev = best;
  }
}

// Oracle: the peak of a sampled triangle is the in-support bin whose mel
// value is closest to the filter center computed from the mel-point formula.
TEST(MelFilterbank, PeakBinsMatchMelPointFormula) {
  const size_t fft = 512, n_mels = 8;
  const int sr = 16000;
  const double low = 20.0, high = sr / 2.0;
  Array fb = mel_filterbank(fft, n_mels, sr, low, high);

  double mel_lo = 2595.0 * std::log10(1.0 + low / 700.0);
  double mel_hi = 2595.0 * std::log10(1.0 + high / 700.0);
  double step = (mel_hi - mel_lo) / (n_mels + 1);
  for (size_t m = 0; m < n_mels; ++m) {
    double left = mel_lo + step * m;
    double center = left + step;
    double right = center + step;
    size_t expect_bin = 0;
    double best_dist = 1e300;
    for (size_t k = 0; k < fft / 2 + 1; ++k) {
      double mel_k = 2595.0 * std::log10(1.0 + (k * double(sr) / fft) / 700.0);
      if (mel_k <= left || mel_k >= right) continue;
      double d = std::fabs(mel_k - center);
      if (d < best_dist) {
        best_dist = d;
        expect_bin = k;
      }
    }
    size_t got_bin = 0;
    for (size_t k = 1; k < fft / 2 + 1; ++k)
      if (fb.at(m, k) > fb.at(m, got_bin)) got_bin = k;
    EXPECT_EQ(got_bin, expect_bin) << "filter " << m;
  }
}

TEST(MelFilterbank, TooManyMelsForResolutionThrows) {
  EXPECT_THROW(mel_filterbank(512, 128, 16000), ConfigError);
}

TEST(Fbank, TenSecondClipFrameCount) {
  // floor((160000 - 400) / 160) + 1 = 998 raw frames, padded to 1024.
  EXPECT_EQ(fbank_raw_frames(160000, 400, 160), 998u);
  Waveform w = sine_wave(440.0, 10.0, 16000);
  FbankConfig cfg;
  cfg.n_mels = 40;
  cfg.target_frames = 1024;
  MelSpectrogram m = compute_fbank(w, cfg);
  EXPECT_EQ(m.raw_frames, 998u);
  EXPECT_EQ(m.n_frames(), 1024u);
  size_t padded = 0;
  for (uint8_t f : m.frame_mask) padded += f;
  EXPECT_EQ(padded, 1024u - 998u);
  // padding region is exactly log(log_floor)
  for (size_t t = 998; t < 1024; ++t)
    for (size_t r = 0; r < m.n_mels(); ++r)
      EXPECT_EQ(m.values.at(r, t), std::log(cfg.log_floor));
}

TEST(Fbank, AllZeroWaveformHitsLogFloorEverywhere) {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(16000, 0.0);
  FbankConfig cfg;
  cfg.n_mels = 32;
  cfg.target_frames = 100;
  MelSpectrogram m = compute_fbank(w, cfg);
  for (size_t i = 0; i < m.values.numel(); ++i)
    EXPECT_EQ(m.values[i], std::log(cfg.log_floor));
}

TEST(Fbank, ShorterThanOneFrameThrows) {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(100, 0.1);
  FbankConfig cfg;
  EXPECT_THROW(compute_fbank(w, cfg), ConfigError);
}

// Brute force over the filter matrix: the dominant mel row of a pure tone
// is the row whose peak bin lies nearest the tone frequency.
TEST(Fbank, PureToneLandsInNearestFilter) {
  const int sr = 16000;
  const double freq = 1000.0;
  Waveform w = sine_wave(freq, 1.0, sr);
  FbankConfig cfg;
  cfg.n_mels = 32;
  cfg.target_frames = 98;
  MelSpectrogram m = compute_fbank(w, cfg);

  size_t argmax_row = 0;
  double best = -1e300;
  for (size_t r = 0; r < m.n_mels(); ++r) {
    double avg = 0.0;
    size_t n = 0;
    for (size_t t = 0; t < m.n_frames(); ++t) {
      if (m.frame_mask[t]) continue;
      avg += m.values.at(r, t);
      ++n;
    }
    avg /= n;
    if (avg > best) {
      best = avg;
      argmax_row = r;
    }
  }

  Array fb = mel_filterbank(512, 32, sr);
  size_t expect_row = 0;
  double best_dist = 1e300;
  for (size_t r = 0; r < 32; ++r) {
    size_t peak_bin = 0;
    for (size_t k = 1; k < fb.cols(); ++k)
      if (fb.at(r, k) > fb.at(r, peak_bin)) peak_bin = k;
    double peak_hz = peak_bin * double(sr) / 512.0;
    double d = std::fabs(peak_hz - freq);
    if (d < best_dist) {
      best_dist = d;
      expect_row = r;
    }
  }
  EXPECT_EQ(argmax_row, expect_row);
}

TEST(Fbank, DeterministicByteForByte) {
  Rng rng(99);
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(8000);
  for (auto& s : w.samples) s = rng.uniform(-0.5, 0.5);
  FbankConfig cfg;
  cfg.n_mels = 24;
  cfg.target_frames = 64;
  MelSpectrogram a = compute_fbank(w, cfg);
  MelSpectrogram b = compute_fbank(w, cfg);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.frame_mask, b.frame_mask);
}

TEST(Fbank, AmplitudeScalingNeverDecreasesUnpaddedCells) {
  Rng rng(123);
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(6400);
  for (auto& s : w.samples) s = rng.uniform(-0.3, 0.3);
  Waveform w2 = w;
  for (auto& s : w2.samples) s *= 2.5;
  FbankConfig cfg;
  cfg.n_mels = 24;
  cfg.target_frames = 48;
  MelSpectrogram a = compute_fbank(w, cfg);
  MelSpectrogram b = compute_fbank(w2, cfg);
  for (size_t t = 0; t < a.n_frames(); ++t) {
    if (a.frame_mask[t]) continue;
    for (size_t r = 0; r < a.n_mels(); ++r) {
      EXPECT_GE(b.values.at(r, t), a.values.at(r, t));
    }
  }
}

TEST(Wav, RoundTripPcm16) {
  Waveform w = sine_wave(330.0, 0.25, 16000, 0.4);
  std::string path =
      (std::filesystem::temp_directory_path() / "crtrain_wavtest.wav").string();
  write_wav(path, w);
  Waveform r = read_wav(path);
  EXPECT_EQ(r.sample_rate, 16000);
  ASSERT_EQ(r.samples.size(), w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i) {
    EXPECT_NEAR(r.samples[i], w.samples[i], 1.0 / 32767.0);
  }
  std::remove(path.c_str());
}

TEST(Wav, RejectsGarbage) {
  std::string path =
      (std::filesystem::temp_directory_path() / "crtrain_badwav.wav").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a wav file at all";
  }
  EXPECT_THROW(read_wav(path), IoError);
  std::remove(path.c_str());
}

}  // namespace
}  // namespace crtrain
