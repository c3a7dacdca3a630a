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

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "crtrain/array.hpp"
#include "crtrain/util.hpp"
#include "crtrain/wav.hpp"

namespace crtrain {

struct FbankConfig {
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  size_t n_mels = 128;
  size_t fft_size = 0;  // 0 = next power of two >= frame samples
  size_t target_frames = 1024;
  double dither = 0.0;
  double log_floor = 1e-10;  // floor applied to mel power before log
  double low_freq = 20.0;
  double high_freq = 0.0;  // 0 = Nyquist
  bool hann_window = true;
  double preemphasis = 0.0;

  size_t frame_samples(int sample_rate) const {
    return static_cast<size_t>(frame_length_ms * sample_rate / 1000.0);
  }
  size_t shift_samples(int sample_rate) const {
    return static_cast<size_t>(frame_shift_ms * sample_rate / 1000.0);
  }
  size_t resolved_fft_size(int sample_rate) const {
    if (fft_size != 0) return fft_size;
    size_t n = 1;
    while (n < frame_samples(sample_rate)) n <<= 1;
    return n;
  }

  void validate(int sample_rate) const {
    if (frame_shift_ms > frame_length_ms) {
      throw ConfigError("fbank: frame_shift must be <= frame_length");
    }
    size_t fft = resolved_fft_size(sample_rate);
    if (fft < frame_samples(sample_rate)) {
      throw ConfigError("fbank: fft_size smaller than the frame");
    }
    if (n_mels > fft / 2) {
      throw ConfigError("fbank: n_mels must be <= fft_size/2");
    }
  }
};

// Log-mel spectrogram plus a per-frame padding mask. Augmentations and
// normalization must not treat padded frames as signal.
struct MelSpectrogram {
  Array values;                // n_mels x target_frames
  std::vector<uint8_t> frame_mask;  // 1 = padding frame
  size_t raw_frames = 0;
  std::string provenance;

  size_t n_mels() const { return values.rows(); }
  size_t n_frames() const { return values.cols(); }
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// In-place iterative radix-2 FFT.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) {
    throw NumericError("fft: size must be a power of two");
  }
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Triangular filters on the mel scale; rows are filters over the FFT bins
// [0, fft_size/2]. Throws when a filter captures no bin (n_mels too large
// for the spectral resolution).
inline Array mel_filterbank(size_t fft_size, size_t n_mels, int sample_rate,
                            double low_freq = 20.0, double high_freq = 0.0) {
  if (fft_size == 0 || n_mels == 0 || sample_rate <= 0) {
    throw ConfigError("mel_filterbank: arguments must be positive");
  }
  double nyquist = sample_rate / 2.0;
  if (high_freq <= 0.0) high_freq = nyquist;
  if (low_freq < 0.0 || high_freq > nyquist || low_freq >= high_freq) {
    throw ConfigError("mel_filterbank: invalid band edges");
  }
  size_t n_bins = fft_size / 2 + 1;
  double mel_lo = hz_to_mel(low_freq);
  double mel_hi = hz_to_mel(high_freq);
  double mel_step = (mel_hi - mel_lo) / static_cast<double>(n_mels + 1);

  Array fb({n_mels, n_bins});
  for (size_t m = 0; m < n_mels; ++m) {
    double left = mel_lo + mel_step * static_cast<double>(m);
    double center = left + mel_step;
    double right = center + mel_step;
    bool nonzero = false;
    for (size_t k = 0; k < n_bins; ++k) {
      double mel_k = hz_to_mel(static_cast<double>(k) * sample_rate /
                               static_cast<double>(fft_size));
      double w = 0.0;
      if (mel_k > left && mel_k < right) {
        w = mel_k <= center ? (mel_k - left) / (center - left)
                            : (right - mel_k) / (right - center);
      }
      fb.at(m, k) = w;
      nonzero = nonzero || w > 0.0;
    }
    if (!nonzero) {
      throw ConfigError("mel_filterbank: filter " + std::to_string(m) +
                        " is empty; n_mels=" + std::to_string(n_mels) +
                        " is too large for fft_size=" +
                        std::to_string(fft_size));
    }
  }
  return fb;
}

inline size_t fbank_raw_frames(size_t n_samples, size_t frame_len,
                               size_t shift) {
  if (n_samples < frame_len) return 0;
  return (n_samples - frame_len) / shift + 1;
}

inline MelSpectrogram compute_fbank(const Waveform& w, const FbankConfig& cfg,
                                    Rng* dither_rng = nullptr,
                                    std::string provenance = "") {
  cfg.validate(w.sample_rate);
  size_t frame_len = cfg.frame_samples(w.sample_rate);
  size_t shift = cfg.shift_samples(w.sample_rate);
  if (w.samples.size() < frame_len) {
    throw ConfigError("compute_fbank: waveform shorter than one frame (" +
                      std::to_string(w.samples.size()) + " < " +
                      std::to_string(frame_len) + " samples)");
  }
  size_t fft_size = cfg.resolved_fft_size(w.sample_rate);
  size_t n_bins = fft_size / 2 + 1;
  size_t raw_frames = fbank_raw_frames(w.samples.size(), frame_len, shift);
  size_t out_frames =
      cfg.target_frames > 0 ? cfg.target_frames : raw_frames;
  size_t used_frames = raw_frames < out_frames ? raw_frames : out_frames;

  Array fb = mel_filterbank(fft_size, cfg.n_mels, w.sample_rate, cfg.low_freq,
                            cfg.high_freq);
  std::vector<double> window(frame_len, 1.0);
  if (cfg.hann_window) {
    for (size_t i = 0; i < frame_len; ++i) {
      window[i] =
          0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                               static_cast<double>(frame_len - 1));
    }
  }

  double log_floor_value = std::log(cfg.log_floor);
  MelSpectrogram out;
  out.values = Array::full({cfg.n_mels, out_frames}, log_floor_value);
  out.frame_mask.assign(out_frames, 1);
  out.raw_frames = raw_frames;
  out.provenance = std::move(provenance);

  std::vector<std::complex<double>> buf(fft_size);
  std::vector<double> power(n_bins);
  for (size_t t = 0; t < used_frames; ++t) {
    out.frame_mask[t] = 0;
    size_t off = t * shift;
    double prev = 0.0;
    for (size_t i = 0; i < fft_size; ++i) {
      double s = 0.0;
      if (i < frame_len) {
        s = w.samples[off + i];
        if (cfg.dither > 0.0 && dither_rng != nullptr) {
          s += cfg.dither * dither_rng->normal();
        }
        if (cfg.preemphasis > 0.0) {
          double cur = s;
          s = s - cfg.preemphasis * prev;
          prev = cur;
        }
        s *= window[i];
      }
      buf[i] = {s, 0.0};
    }
    fft_radix2(buf);
    for (size_t k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
    for (size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const double* row = fb.data() + m * n_bins;
      for (size_t k = 0; k < n_bins; ++k) e += row[k] * power[k];
      out.values.at(m, t) = std::log(e > cfg.log_floor ? e : cfg.log_floor);
    }
  }
  return out;
}

// Peak frequency (Hz) of each filter row, used by tests and by the
// synthetic-event sanity checks.
inline std::vector<double> filterbank_peak_freqs(size_t fft_size, size_t n_mels,
                                                 int sample_rate,
                                                 double low_freq = 20.0,
                                                 double high_freq = 0.0) {
  Array fb = mel_filterbank(fft_size, n_mels, sample_rate, low_freq, high_freq);
  size_t n_bins = fft_size / 2 + 1;
  std::vector<double> peaks(n_mels);
  for (size_t m = 0; m < n_mels; ++m) {
    size_t best = 0;
    for (size_t k = 1; k < n_bins; ++k) {
      if (fb.at(m, k) > fb.at(m, best)) best = k;
    }
    peaks[m] = static_cast<double>(best) * sample_rate /
               static_cast<double>(fft_size);
  }
  return peaks;
}

}  // namespace crtrain
