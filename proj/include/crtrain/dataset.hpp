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
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crtrain/array.hpp"
#include "crtrain/fbank.hpp"
#include "crtrain/ontology.hpp"
#include "crtrain/util.hpp"
#include "crtrain/wav.hpp"

namespace crtrain {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Synthetic event inventory
// ---------------------------------------------------------------------------

struct EventDef {
  std::string label;         // must name a leaf (evaluation) label
  std::string kind;          // "tone" | "chirp" | "noise_band"
  double f0 = 0.0;           // tone freq / chirp start / band low edge
  double f1 = 0.0;           // chirp end / band high edge
};

struct GeneratorSpec {
  int sample_rate = 16000;
  double clip_seconds = 1.3;
  int events_min = 1;
  int events_max = 3;
  double zipf_skew = 0.8;       // class draw ~ 1/rank^skew over the leaf order
  double amp_min = 0.04;
  double amp_max = 0.35;
  double noise_floor = 0.02;    // white-noise stddev
  double gain_db_jitter = 6.0;  // per-clip gain ~ U(-j, +j) dB
  double overlap = 0.0;         // fractional band jitter; 0 = disjoint events
  int train = 2000;
  int dev = 500;
  int test = 500;
  uint64_t seed = 1;
  std::vector<EventDef> events;  // one per leaf label
  LabelDag dag;

  void validate() const {
    if (events.empty()) throw ConfigError("generator: empty event inventory");
    if (sample_rate <= 0 || clip_seconds <= 0) {
      throw ConfigError("generator: sample_rate and clip_seconds must be positive");
    }
    if (events_min < 1 || events_max < events_min) {
      throw ConfigError("generator: invalid events-per-clip range");
    }
    if (train < 0 || dev < 0 || test < 0) {
      throw ConfigError("generator: negative split size");
    }
    dag.validate();
    if (events.size() != dag.eval_ids.size()) {
      throw ConfigError("generator: need exactly one event per evaluation label");
    }
    for (const auto& e : events) dag.id_of(e.label);
  }
};

// 12 leaf classes in distinct spectral regions, 5 intermediate labels.
inline GeneratorSpec default_generator_spec() {
  GeneratorSpec spec;
  // leaves first (ids 0..11), intermediates after (ids 12..16)
  spec.dag.names = {
      "tone_200",  "tone_300",  "tone_450",  "tone_650",
      "tone_950",  "tone_1400", "chirp_up",  "chirp_down",
      "noise_4k",  "noise_5k",  "noise_6k",  "noise_7k",
      "tone_low",  "tone_high", "chirp",     "noise",
      "pitched",
  };
  const int kToneLow = 12, kToneHigh = 13, kChirp = 14, kNoise = 15,
            kPitched = 16;
  spec.dag.parents.assign(17, {});
  spec.dag.parents[0] = {kToneLow};
  spec.dag.parents[1] = {kToneLow};
  spec.dag.parents[2] = {kToneLow};
  spec.dag.parents[3] = {kToneHigh};
  spec.dag.parents[4] = {kToneHigh};
  spec.dag.parents[5] = {kToneHigh};
  spec.dag.parents[6] = {kChirp};
  spec.dag.parents[7] = {kChirp};
  spec.dag.parents[8] = {kNoise};
  spec.dag.parents[9] = {kNoise};
  spec.dag.parents[10] = {kNoise};
  spec.dag.parents[11] = {kNoise};
  spec.dag.parents[kToneLow] = {kPitched};
  spec.dag.parents[kToneHigh] = {kPitched};
  spec.dag.parents[kChirp] = {kPitched};
  for (int i = 0; i < 12; ++i) spec.dag.eval_ids.push_back(i);

  spec.events = {
      {"tone_200", "tone", 200, 0},
      {"tone_300", "tone", 300, 0},
      {"tone_450", "tone", 450, 0},
      {"tone_650", "tone", 650, 0},
      {"tone_950", "tone", 950, 0},
      {"tone_1400", "tone", 1400, 0},
      {"chirp_up", "chirp", 1800, 2600},
      {"chirp_down", "chirp", 3600, 2800},
      {"noise_4k", "noise_band", 4200, 5000},
      {"noise_5k", "noise_band", 5200, 6000},
      {"noise_6k", "noise_band", 6200, 7000},
      {"noise_7k", "noise_band", 7200, 7900},
  };
  return spec;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestExample {
  std::string id;
  std::string split;        // train | dev | test
  std::string wav;          // relative path
  std::string feat;         // relative path to f32 cache
  size_t raw_frames = 0;
  std::vector<int> labels;  // raw leaf annotation
  std::vector<int> target;  // ancestor-expanded label ids over F
};

struct DatasetManifest {
  LabelDag dag;
  std::vector<ManifestExample> examples;
  double feat_mean = 0.0;
  double feat_std = 1.0;
  FbankConfig fbank;
  json generator;  // spec echo
  uint64_t seed = 0;
  std::map<std::string, int> split_counts;
  std::string hash;  // FNV-1a of the canonical serialization, hash zeroed

  std::vector<size_t> split_indices(const std::string& split) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < examples.size(); ++i) {
      if (examples[i].split == split) out.push_back(i);
    }
    return out;
  }
};

inline json fbank_to_json(const FbankConfig& c) {
  return json{{"frame_length_ms", c.frame_length_ms},
              {"frame_shift_ms", c.frame_shift_ms},
              {"n_mels", c.n_mels},
              {"fft_size", c.fft_size},
              {"target_frames", c.target_frames},
              {"dither", c.dither},
              {"log_floor", c.log_floor},
              {"low_freq", c.low_freq},
              {"high_freq", c.high_freq},
              {"hann_window", c.hann_window},
              {"preemphasis", c.preemphasis}};
}

inline FbankConfig fbank_from_json(const json& j) {
  FbankConfig c;
  c.frame_length_ms = j.at("frame_length_ms").get<double>();
  c.frame_shift_ms = j.at("frame_shift_ms").get<double>();
  c.n_mels = j.at("n_mels").get<size_t>();
  c.fft_size = j.at("fft_size").get<size_t>();
  c.target_frames = j.at("target_frames").get<size_t>();
  c.dither = j.at("dither").get<double>();
  c.log_floor = j.at("log_floor").get<double>();
  c.low_freq = j.at("low_freq").get<double>();
  c.high_freq = j.at("high_freq").get<double>();
  c.hann_window = j.at("hann_window").get<bool>();
  c.preemphasis = j.at("preemphasis").get<double>();
  return c;
}

inline json dag_to_json(const LabelDag& dag) {
  return json{{"names", dag.names},
              {"parents", dag.parents},
              {"eval_ids", dag.eval_ids}};
}

inline LabelDag dag_from_json(const json& j) {
  LabelDag dag;
  dag.names = j.at("names").get<std::vector<std::string>>();
  dag.parents = j.at("parents").get<std::vector<std::vector<int>>>();
  dag.eval_ids = j.at("eval_ids").get<std::vector<int>>();
  dag.validate();
  return dag;
}

inline json manifest_to_json(const DatasetManifest& m) {
  json ex = json::array();
  for (const auto& e : m.examples) {
    ex.push_back(json{{"id", e.id},
                      {"split", e.split},
                      {"wav", e.wav},
                      {"feat", e.feat},
                      {"raw_frames", e.raw_frames},
                      {"labels", e.labels},
                      {"target", e.target}});
  }
  return json{{"format", "crtrain-dataset-v1"},
              {"dag", dag_to_json(m.dag)},
              {"examples", ex},
              {"stats", json{{"feat_mean", m.feat_mean}, {"feat_std", m.feat_std}}},
              {"fbank", fbank_to_json(m.fbank)},
              {"generator", m.generator},
              {"seed", m.seed},
              {"splits", m.split_counts},
              {"manifest_hash", m.hash}};
}

inline DatasetManifest manifest_from_json(const json& j) {
  if (j.at("format").get<std::string>() != "crtrain-dataset-v1") {
    throw ConfigError("manifest: unknown format tag");
  }
  DatasetManifest m;
  m.dag = dag_from_json(j.at("dag"));
  for (const auto& e : j.at("examples")) {
    ManifestExample me;
    me.id = e.at("id").get<std::string>();
    me.split = e.at("split").get<std::string>();
    me.wav = e.at("wav").get<std::string>();
    me.feat = e.at("feat").get<std::string>();
    me.raw_frames = e.at("raw_frames").get<size_t>();
    me.labels = e.at("labels").get<std::vector<int>>();
    me.target = e.at("target").get<std::vector<int>>();
    m.examples.push_back(std::move(me));
  }
  m.feat_mean = j.at("stats").at("feat_mean").get<double>();
  m.feat_std = j.at("stats").at("feat_std").get<double>();
  m.fbank = fbank_from_json(j.at("fbank"));
  m.generator = j.at("generator");
  m.seed = j.at("seed").get<uint64_t>();
  m.split_counts = j.at("splits").get<std::map<std::string, int>>();
  m.hash = j.at("manifest_hash").get<std::string>();
  return m;
}

inline std::string manifest_hash(const DatasetManifest& m) {
  DatasetManifest tmp = m;
  tmp.hash = "";
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(
                    fnv1a64(manifest_to_json(tmp).dump())));
  return buf;
}

inline void write_manifest(const std::string& path, DatasetManifest& m) {
  m.hash = manifest_hash(m);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_manifest: cannot open " + path);
  f << manifest_to_json(m).dump(2) << "\n";
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_manifest: cannot open " + path);
  json j = json::parse(f);
  return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// Feature cache (row-major n_mels x frames, 32-bit little-endian floats)
// ---------------------------------------------------------------------------

inline void write_feature_cache(const std::string& path, const Array& values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_feature_cache: cannot open " + path);
  std::vector<float> buf(values.numel());
  for (size_t i = 0; i < values.numel(); ++i) {
    buf[i] = static_cast<float>(values[i]);
  }
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

inline Array read_feature_cache(const std::string& path, size_t n_mels,
                                size_t frames) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_feature_cache: cannot open " + path);
  std::vector<float> buf(n_mels * frames);
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (static_cast<size_t>(f.gcount()) != buf.size() * sizeof(float)) {
    throw IoError("read_feature_cache: " + path + " is truncated");
  }
  Array out({n_mels, frames});
  for (size_t i = 0; i < out.numel(); ++i) out[i] = buf[i];
  return out;
}

// ---------------------------------------------------------------------------
// Clip synthesis
// ---------------------------------------------------------------------------

namespace detail {

// Distinct leaf classes for one clip, drawn by a Zipf-like skew over the
// leaf order.
inline std::vector<int> draw_event_classes(const GeneratorSpec& spec,
                                           Rng& rng) {
  size_t n = spec.events.size();
  std::vector<double> w(n);
  double total = 0.0;
  for (size_t j = 0; j < n; ++j) {
    w[j] = 1.0 / std::pow(static_cast<double>(j + 1), spec.zipf_skew);
    total += w[j];
  }
  int count = static_cast<int>(rng.uniform_int(spec.events_min, spec.events_max));
  count = std::min<int>(count, static_cast<int>(n));
  std::vector<int> out;
  std::vector<bool> used(n, false);
  while (static_cast<int>(out.size()) < count) {
    double u = rng.uniform(0.0, total);
    size_t pick = 0;
    double acc = 0.0;
    for (size_t j = 0; j < n; ++j) {
      acc += w[j];
      if (u <= acc) {
        pick = j;
        break;
      }
    }
    if (used[pick]) continue;
    used[pick] = true;
    out.push_back(static_cast<int>(pick));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline void add_event(std::vector<double>& samples, const EventDef& ev,
                      const GeneratorSpec& spec, Rng& rng) {
  int sr = spec.sample_rate;
  size_t n = samples.size();
  double amp = rng.uniform(spec.amp_min, spec.amp_max);
  double dur_frac = rng.uniform(0.3, 0.9);
  auto dur = static_cast<size_t>(dur_frac * static_cast<double>(n));
  if (dur < static_cast<size_t>(sr / 50)) dur = static_cast<size_t>(sr / 50);
  if (dur > n) dur = n;
  auto start = static_cast<size_t>(
      rng.uniform_int(0, static_cast<int64_t>(n - dur)));
  size_t ramp = dur / 10 + 1;

  double jit = spec.overlap > 0.0
                   ? 1.0 + rng.uniform(-spec.overlap, spec.overlap)
                   : 1.0;
  double f0 = ev.f0 * jit, f1 = ev.f1 * jit;

  auto envelope = [&](size_t i) {
    double e = 1.0;
    if (i < ramp) e = static_cast<double>(i) / static_cast<double>(ramp);
    if (dur - i <= ramp) e = static_cast<double>(dur - i) / static_cast<double>(ramp);
    return e;
  };

  if (ev.kind == "tone") {
    double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (size_t i = 0; i < dur; ++i) {
      double t = static_cast<double>(i) / sr;
      samples[start + i] +=
          amp * envelope(i) * std::sin(2.0 * M_PI * f0 * t + phase);
    }
  } else if (ev.kind == "chirp") {
    double phase = rng.uniform(0.0, 2.0 * M_PI);
    double dur_s = static_cast<double>(dur) / sr;
    for (size_t i = 0; i < dur; ++i) {
      double t = static_cast<double>(i) / sr;
      double inst = 2.0 * M_PI * (f0 * t + 0.5 * (f1 - f0) * t * t / dur_s);
      samples[start + i] += amp * envelope(i) * std::sin(inst + phase);
    }
  } else if (ev.kind == "noise_band") {
    // band-limited noise as a bundle of random-phase sines
    const int kComponents = 24;
    std::vector<double> freqs(kComponents), phases(kComponents);
    for (int c = 0; c < kComponents; ++c) {
      freqs[c] = rng.uniform(std::min(f0, f1), std::max(f0, f1));
      phases[c] = rng.uniform(0.0, 2.0 * M_PI);
    }
    double comp_amp = amp / std::sqrt(static_cast<double>(kComponents));
    for (size_t i = 0; i < dur; ++i) {
      double t = static_cast<double>(i) / sr;
      double s = 0.0;
      for (int c = 0; c < kComponents; ++c) {
        s += std::sin(2.0 * M_PI * freqs[c] * t + phases[c]);
      }
      samples[start + i] += comp_amp * envelope(i) * s;
    }
  } else {
    throw ConfigError("generator: unknown event kind '" + ev.kind + "'");
  }
}

inline Waveform synthesize_clip(const GeneratorSpec& spec,
                                const std::vector<int>& classes, Rng& rng) {
  Waveform w;
  w.sample_rate = spec.sample_rate;
  auto n = static_cast<size_t>(spec.clip_seconds * spec.sample_rate);
  w.samples.assign(n, 0.0);
  for (int cls : classes) {
    add_event(w.samples, spec.events[static_cast<size_t>(cls)], spec, rng);
  }
  if (spec.noise_floor > 0.0) {
    for (auto& s : w.samples) s += spec.noise_floor * rng.normal();
  }
  if (spec.gain_db_jitter > 0.0) {
    double db = rng.uniform(-spec.gain_db_jitter, spec.gain_db_jitter);
    double g = std::pow(10.0, db / 20.0);
    for (auto& s : w.samples) s *= g;
  }
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::fabs(s));
  if (peak > 0.99) {
    double g = 0.99 / peak;
    for (auto& s : w.samples) s *= g;
  }
  return w;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

inline json generator_to_json(const GeneratorSpec& spec) {
  json ev = json::array();
  for (const auto& e : spec.events) {
    ev.push_back(json{
        {"label", e.label}, {"kind", e.kind}, {"f0", e.f0}, {"f1", e.f1}});
  }
  return json{{"sample_rate", spec.sample_rate},
              {"clip_seconds", spec.clip_seconds},
              {"events_min", spec.events_min},
              {"events_max", spec.events_max},
              {"zipf_skew", spec.zipf_skew},
              {"amp_min", spec.amp_min},
              {"amp_max", spec.amp_max},
              {"noise_floor", spec.noise_floor},
              {"gain_db_jitter", spec.gain_db_jitter},
              {"overlap", spec.overlap},
              {"train", spec.train},
              {"dev", spec.dev},
              {"test", spec.test},
              {"seed", spec.seed},
              {"events", ev},
              {"dag", dag_to_json(spec.dag)}};
}

inline GeneratorSpec generator_from_json(const json& j) {
  GeneratorSpec spec;
  spec.sample_rate = j.at("sample_rate").get<int>();
  spec.clip_seconds = j.at("clip_seconds").get<double>();
  spec.events_min = j.at("events_min").get<int>();
  spec.events_max = j.at("events_max").get<int>();
  spec.zipf_skew = j.at("zipf_skew").get<double>();
  spec.amp_min = j.at("amp_min").get<double>();
  spec.amp_max = j.at("amp_max").get<double>();
  spec.noise_floor = j.at("noise_floor").get<double>();
  spec.gain_db_jitter = j.at("gain_db_jitter").get<double>();
  spec.overlap = j.at("overlap").get<double>();
  spec.train = j.at("train").get<int>();
  spec.dev = j.at("dev").get<int>();
  spec.test = j.at("test").get<int>();
  spec.seed = j.at("seed").get<uint64_t>();
  spec.events.clear();
  for (const auto& e : j.at("events")) {
    spec.events.push_back(EventDef{e.at("label").get<std::string>(),
                                   e.at("kind").get<std::string>(),
                                   e.at("f0").get<double>(),
                                   e.at("f1").get<double>()});
  }
  spec.dag = dag_from_json(j.at("dag"));
  return spec;
}

// Writes WAVs, feature caches, and manifest.json under out_dir.
// Deterministic given spec.seed.
inline DatasetManifest generate_dataset(const GeneratorSpec& spec,
                                        const std::string& out_dir,
                                        const FbankConfig& fbank_cfg) {
  spec.validate();
  fbank_cfg.validate(spec.sample_rate);
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "audio");
  fs::create_directories(fs::path(out_dir) / "features");

  DatasetManifest m;
  m.dag = spec.dag;
  m.fbank = fbank_cfg;
  m.generator = generator_to_json(spec);
  m.seed = spec.seed;

  double stat_sum = 0.0, stat_sum2 = 0.0;
  size_t stat_n = 0;

  const std::vector<std::pair<std::string, int>> splits = {
      {"train", spec.train}, {"dev", spec.dev}, {"test", spec.test}};
  for (size_t s = 0; s < splits.size(); ++s) {
    const auto& [split, count] = splits[s];
    for (int i = 0; i < count; ++i) {
      Rng rng = Rng::derive(spec.seed, "clip", s, static_cast<uint64_t>(i));
      std::vector<int> classes = detail::draw_event_classes(spec, rng);
      Waveform w = detail::synthesize_clip(spec, classes, rng);

      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "%s_%06d", split.c_str(), i);
      ManifestExample ex;
      ex.id = idbuf;
      ex.split = split;
      ex.wav = "audio/" + ex.id + ".wav";
      ex.feat = "features/" + ex.id + ".f32";
      ex.labels = classes;
      ex.target = expand_with_ancestors(classes, spec.dag);

      write_wav((fs::path(out_dir) / ex.wav).string(), w);
      MelSpectrogram mel = compute_fbank(w, fbank_cfg, nullptr, ex.id);
      ex.raw_frames = mel.raw_frames;
      write_feature_cache((fs::path(out_dir) / ex.feat).string(), mel.values);

      if (split == "train") {
        for (size_t t = 0; t < mel.n_frames(); ++t) {
          if (mel.frame_mask[t]) continue;
          for (size_t r = 0; r < mel.n_mels(); ++r) {
            double v = mel.values.at(r, t);
            stat_sum += v;
            stat_sum2 += v * v;
            ++stat_n;
          }
        }
      }
      m.examples.push_back(std::move(ex));
    }
    m.split_counts[split] = count;
  }

  if (stat_n > 0) {
    m.feat_mean = stat_sum / static_cast<double>(stat_n);
    double var = stat_sum2 / static_cast<double>(stat_n) - m.feat_mean * m.feat_mean;
    m.feat_std = var > 1e-12 ? std::sqrt(var) : 1.0;
  }

  write_manifest((fs::path(out_dir) / "manifest.json").string(), m);
  return m;
}

// ---------------------------------------------------------------------------
// In-memory dataset
// ---------------------------------------------------------------------------

struct LoadedExample {
  std::string id;
  std::string split;
  std::vector<int> labels;
  std::vector<int> target_ids;
  Array features;                   // normalized, n_mels x frames
  std::vector<uint8_t> frame_mask;  // 1 = padding
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<LoadedExample> examples;
  std::vector<size_t> train_ids, dev_ids, test_ids;

  size_t n_labels() const { return manifest.dag.n_labels(); }

  const std::vector<size_t>& split_ids(const std::string& split) const {
    if (split == "train") return train_ids;
    if (split == "dev") return dev_ids;
    if (split == "test") return test_ids;
    throw ConfigError("unknown split '" + split + "'");
  }

  std::vector<double> target_vector(size_t example_idx) const {
    std::vector<double> y(n_labels(), 0.0);
    for (int id : examples[example_idx].target_ids) {
      y[static_cast<size_t>(id)] = 1.0;
    }
    return y;
  }

  MelSpectrogram spectrogram(size_t example_idx) const {
    MelSpectrogram s;
    s.values = examples[example_idx].features;
    s.frame_mask = examples[example_idx].frame_mask;
    s.raw_frames = s.frame_mask.size();
    s.provenance = examples[example_idx].id;
    return s;
  }
};

// Loads the feature caches and applies the manifest's train-split
// normalization. Features pass through the 32-bit cache on every path, so
// cached and freshly generated runs see identical inputs.
inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset d;
  d.manifest = read_manifest((fs::path(dir) / "manifest.json").string());
  double mean = d.manifest.feat_mean;
  double stddev = d.manifest.feat_std > 0 ? d.manifest.feat_std : 1.0;
  size_t n_mels = d.manifest.fbank.n_mels;
  size_t frames = d.manifest.fbank.target_frames;
  for (const auto& ex : d.manifest.examples) {
    LoadedExample le;
    le.id = ex.id;
    le.split = ex.split;
    le.labels = ex.labels;
    le.target_ids = ex.target;
    le.features = read_feature_cache((fs::path(dir) / ex.feat).string(),
                                     n_mels, frames);
    for (size_t i = 0; i < le.features.numel(); ++i) {
      le.features[i] = (le.features[i] - mean) / stddev;
    }
    le.frame_mask.assign(frames, 0);
    for (size_t t = ex.raw_frames; t < frames; ++t) le.frame_mask[t] = 1;
    size_t idx = d.examples.size();
    if (ex.split == "train") d.train_ids.push_back(idx);
    if (ex.split == "dev") d.dev_ids.push_back(idx);
    if (ex.split == "test") d.test_ids.push_back(idx);
    d.examples.push_back(std::move(le));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Class-balanced sampling
// ---------------------------------------------------------------------------

// weight(example) = sum over its positive classes of 1/count(class),
// normalized to sum 1. Classes with no positives are excluded; an
// all-zero target falls back to a 1/N floor.
inline std::vector<double> class_balanced_weights(
    const std::vector<std::vector<int>>& targets, size_t n_classes,
    std::vector<int>* excluded_classes = nullptr) {
  std::vector<size_t> counts(n_classes, 0);
  for (const auto& t : targets) {
    for (int c : t) counts[static_cast<size_t>(c)]++;
  }
  if (excluded_classes != nullptr) {
    excluded_classes->clear();
    for (size_t c = 0; c < n_classes; ++c) {
      if (counts[c] == 0) excluded_classes->push_back(static_cast<int>(c));
    }
  }
  size_t n = targets.size();
  std::vector<double> w(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int c : targets[i]) {
      if (counts[static_cast<size_t>(c)] > 0) {
        acc += 1.0 / static_cast<double>(counts[static_cast<size_t>(c)]);
      }
    }
    w[i] = acc > 0.0 ? acc : 1.0 / static_cast<double>(n);
  }
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  return w;
}

// n i.i.d. categorical draws (with replacement) by inverse CDF.
inline std::vector<size_t> weighted_sample(const std::vector<double>& weights,
                                           size_t n, Rng& rng) {
  std::vector<double> cdf(weights.size());
  double acc = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    cdf[i] = acc;
  }
  std::vector<size_t> out(n);
  for (size_t i = 0; i < n; ++i) {
    double u = rng.uniform(0.0, acc);
    size_t lo = 0, hi = cdf.size() - 1;
    while (lo < hi) {
      size_t mid = (lo + hi) / 2;
      if (cdf[mid] < u) {
        lo = mid + 1;
      } else {
        hi = mid;
      }
    }
    out[i] = lo;
  }
  return out;
}

}  // namespace crtrain
