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
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "crtrain/array.hpp"
#include "crtrain/autodiff.hpp"
#include "crtrain/fbank.hpp"
#include "crtrain/util.hpp"

namespace crtrain {

// Patch-based transformer encoder over mel spectrograms: patchify,
// train-time patch dropout, pre-norm blocks, mean pooling over kept
// tokens, linear multi-label head.
struct EncoderConfig {
  size_t input_mels = 32;
  size_t input_frames = 128;
  size_t patch_h = 8;
  size_t patch_w = 8;
  size_t embed_dim = 64;
  size_t depth = 4;
  size_t heads = 4;
  double mlp_ratio = 4.0;
  double patch_drop_rate = 0.2;
  size_t n_classes = 17;

  size_t patch_dim() const { return patch_h * patch_w; }
  size_t n_patches() const {
    return (input_mels / patch_h) * (input_frames / patch_w);
  }
  size_t mlp_hidden() const {
    return static_cast<size_t>(mlp_ratio * static_cast<double>(embed_dim));
  }

  void validate() const {
    if (patch_h == 0 || patch_w == 0 || input_mels % patch_h != 0 ||
        input_frames % patch_w != 0) {
      throw ConfigError("encoder: patch dims must divide the spectrogram dims (" +
                        std::to_string(input_mels) + "x" +
                        std::to_string(input_frames) + " vs patch " +
                        std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                        ")");
    }
    if (embed_dim == 0 || depth == 0 || heads == 0 || n_classes == 0) {
      throw ConfigError("encoder: zero-sized dimension");
    }
    if (embed_dim % heads != 0) {
      throw ConfigError("encoder: embed_dim must be divisible by heads");
    }
    if (patch_drop_rate < 0.0 || patch_drop_rate >= 1.0) {
      throw ConfigError("encoder: patch_drop_rate must lie in [0,1)");
    }
    if (mlp_hidden() == 0) throw ConfigError("encoder: mlp_ratio too small");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"input_mels", input_mels},
                          {"input_frames", input_frames},
                          {"patch_h", patch_h},
                          {"patch_w", patch_w},
                          {"embed_dim", embed_dim},
                          {"depth", depth},
                          {"heads", heads},
                          {"mlp_ratio", mlp_ratio},
                          {"patch_drop_rate", patch_drop_rate},
                          {"n_classes", n_classes}};
  }

  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.input_mels = j.at("input_mels").get<size_t>();
    c.input_frames = j.at("input_frames").get<size_t>();
    c.patch_h = j.at("patch_h").get<size_t>();
    c.patch_w = j.at("patch_w").get<size_t>();
    c.embed_dim = j.at("embed_dim").get<size_t>();
    c.depth = j.at("depth").get<size_t>();
    c.heads = j.at("heads").get<size_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<double>();
    c.patch_drop_rate = j.at("patch_drop_rate").get<double>();
    c.n_classes = j.at("n_classes").get<size_t>();
    return c;
  }
};

// Named parameter tensors; map order (lexicographic) is the canonical
// iteration order for checkpoints and optimizer state.
using ParamMap = std::map<std::string, Array>;

namespace detail {

inline double truncated_normal(Rng& rng, double stddev) {
  for (;;) {
    double z = rng.normal(0.0, stddev);
    if (std::fabs(z) <= 2.0 * stddev) return z;
  }
}

inline Array init_weight(Shape shape, Rng& rng, double stddev = 0.02) {
  Array a(std::move(shape));
  for (size_t i = 0; i < a.numel(); ++i) a[i] = truncated_normal(rng, stddev);
  return a;
}

}  // namespace detail

inline ParamMap init_params(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamMap p;
  size_t d = cfg.embed_dim, h = cfg.mlp_hidden();
  p["patch_embed.w"] = detail::init_weight({cfg.patch_dim(), d}, rng);
  p["patch_embed.b"] = Array({size_t{1}, d});
  p["pos"] = detail::init_weight({cfg.n_patches(), d}, rng);
  for (size_t l = 0; l < cfg.depth; ++l) {
    std::string k = "blocks." + std::to_string(l) + ".";
    p[k + "ln1.g"] = Array::full({size_t{1}, d}, 1.0);
    p[k + "ln1.b"] = Array({size_t{1}, d});
    p[k + "attn.qkv.w"] = detail::init_weight({d, 3 * d}, rng);
    p[k + "attn.qkv.b"] = Array({size_t{1}, 3 * d});
    p[k + "attn.out.w"] = detail::init_weight({d, d}, rng);
    p[k + "attn.out.b"] = Array({size_t{1}, d});
    p[k + "ln2.g"] = Array::full({size_t{1}, d}, 1.0);
    p[k + "ln2.b"] = Array({size_t{1}, d});
    p[k + "mlp.fc1.w"] = detail::init_weight({d, h}, rng);
    p[k + "mlp.fc1.b"] = Array({size_t{1}, h});
    p[k + "mlp.fc2.w"] = detail::init_weight({h, d}, rng);
    p[k + "mlp.fc2.b"] = Array({size_t{1}, d});
  }
  p["final_ln.g"] = Array::full({size_t{1}, d}, 1.0);
  p["final_ln.b"] = Array({size_t{1}, d});
  p["head.w"] = detail::init_weight({d, cfg.n_classes}, rng);
  p["head.b"] = Array({size_t{1}, cfg.n_classes});
  return p;
}

// Splits a spectrogram into non-overlapping patches in freq-major raster
// order: patch index = mel_block * (frames/patch_w) + frame_block; within a
// patch, cells are row-major (mel, frame).
inline Array patchify(const MelSpectrogram& x, const EncoderConfig& cfg) {
  if (x.n_mels() != cfg.input_mels || x.n_frames() != cfg.input_frames) {
    throw ShapeError("patchify", x.values.shape(),
                     "expected " + std::to_string(cfg.input_mels) + "x" +
                         std::to_string(cfg.input_frames));
  }
  cfg.validate();
  size_t fb = cfg.input_mels / cfg.patch_h;
  size_t tb = cfg.input_frames / cfg.patch_w;
  Array out({fb * tb, cfg.patch_dim()});
  for (size_t i = 0; i < fb; ++i) {
    for (size_t j = 0; j < tb; ++j) {
      size_t patch = i * tb + j;
      size_t k = 0;
      for (size_t r = 0; r < cfg.patch_h; ++r) {
        for (size_t c = 0; c < cfg.patch_w; ++c) {
          out.at(patch, k++) =
              x.values.at(i * cfg.patch_h + r, j * cfg.patch_w + c);
        }
      }
    }
  }
  return out;
}

// Training keeps a uniformly random subset of round((1-rate)*N) patches,
// sorted to preserve raster order; inference keeps everything.
inline std::vector<size_t> patch_dropout_indices(size_t n_patches, double rate,
                                                 Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("patch_dropout: rate must lie in [0,1)");
  }
  if (!training || rate == 0.0) {
    std::vector<size_t> all(n_patches);
    for (size_t i = 0; i < n_patches; ++i) all[i] = i;
    return all;
  }
  auto keep = static_cast<size_t>(
      std::lround((1.0 - rate) * static_cast<double>(n_patches)));
  if (keep == 0) keep = 1;
  return rng.sample_without_replacement(n_patches, keep);
}

inline std::map<std::string, Value> params_to_graph(Graph& g,
                                                    const ParamMap& params,
                                                    bool requires_grad) {
  std::map<std::string, Value> out;
  for (const auto& [name, arr] : params) {
    out.emplace(name, g.leaf(arr, requires_grad));
  }
  return out;
}

// Forward pass over pre-extracted patches; `kept` selects the tokens that
// survive patch dropout. Returns [1 x n_classes] logits.
inline Value model_forward(Graph& g, const Array& patches,
                           const std::vector<size_t>& kept,
                           const std::map<std::string, Value>& p,
                           const EncoderConfig& cfg) {
  if (patches.rank() != 2 || patches.rows() != cfg.n_patches() ||
      patches.cols() != cfg.patch_dim()) {
    throw ShapeError("model_forward", patches.shape(),
                     "expected " + std::to_string(cfg.n_patches()) + "x" +
                         std::to_string(cfg.patch_dim()) + " patches");
  }
  auto param = [&](const std::string& name) -> Value {
    auto it = p.find(name);
    if (it == p.end()) throw ConfigError("model: missing parameter " + name);
    return it->second;
  };

  Array kept_patches({kept.size(), cfg.patch_dim()});
  for (size_t k = 0; k < kept.size(); ++k) {
    for (size_t j = 0; j < cfg.patch_dim(); ++j) {
      kept_patches.at(k, j) = patches.at(kept[k], j);
    }
  }

  Value x = add(matmul(g.leaf(kept_patches), param("patch_embed.w")),
                param("patch_embed.b"));
  x = add(x, take_rows(param("pos"), kept));

  size_t d = cfg.embed_dim;
  size_t dh = d / cfg.heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto check_layer = [&](Value v, size_t layer) {
    if (!v.val().all_finite()) {
      throw NumericError("model: non-finite activations in layer " +
                         std::to_string(layer));
    }
  };

  for (size_t l = 0; l < cfg.depth; ++l) {
    std::string k = "blocks." + std::to_string(l) + ".";
    Value h1 = add(mul(layer_norm_rows(x), param(k + "ln1.g")),
                   param(k + "ln1.b"));
    Value qkv = add(matmul(h1, param(k + "attn.qkv.w")),
                    param(k + "attn.qkv.b"));
    std::vector<Value> head_outs;
    head_outs.reserve(cfg.heads);
    for (size_t hd = 0; hd < cfg.heads; ++hd) {
      Value q = slice_cols(qkv, hd * dh, (hd + 1) * dh);
      Value kk = slice_cols(qkv, d + hd * dh, d + (hd + 1) * dh);
      Value v = slice_cols(qkv, 2 * d + hd * dh, 2 * d + (hd + 1) * dh);
      Value scores = mul_scalar(matmul(q, transpose(kk)), scale);
      Value attn = softmax_rows(scores);
      head_outs.push_back(matmul(attn, v));
    }
    Value merged = cfg.heads == 1 ? head_outs[0] : concat_cols(head_outs);
    Value attn_out = add(matmul(merged, param(k + "attn.out.w")),
                         param(k + "attn.out.b"));
    x = add(x, attn_out);

    Value h2 = add(mul(layer_norm_rows(x), param(k + "ln2.g")),
                   param(k + "ln2.b"));
    Value mlp = add(matmul(gelu(add(matmul(h2, param(k + "mlp.fc1.w")),
                                    param(k + "mlp.fc1.b"))),
                           param(k + "mlp.fc2.w")),
                    param(k + "mlp.fc2.b"));
    x = add(x, mlp);
    check_layer(x, l);
  }

  x = add(mul(layer_norm_rows(x), param("final_ln.g")), param("final_ln.b"));
  Value pooled = mean_rows(x);  // mean over kept tokens, no CLS token
  return add(matmul(pooled, param("head.w")), param("head.b"));
}

// Convenience wrapper: spectrogram in, logits out (inference keeps all
// patches; training draws dropout from the supplied stream).
inline Value model_forward(Graph& g, const MelSpectrogram& x,
                           const std::map<std::string, Value>& p,
                           const EncoderConfig& cfg, bool training = false,
                           Rng* dropout_rng = nullptr) {
  Array patches = patchify(x, cfg);
  std::vector<size_t> kept;
  if (training && dropout_rng != nullptr) {
    kept = patch_dropout_indices(cfg.n_patches(), cfg.patch_drop_rate,
                                 *dropout_rng, true);
  } else {
    Rng unused(0);
    kept = patch_dropout_indices(cfg.n_patches(), 0.0, unused, false);
  }
  return model_forward(g, patches, kept, p, cfg);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, config JSON, then named tensors as 64-bit LE floats.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'C', 'R', 'T', 'C',
                                             'K', 'P', 'T', '1'};

inline void save_checkpoint(const std::string& path, const EncoderConfig& cfg,
                            const ParamMap& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_checkpoint: cannot open " + path);
  f.write(kCheckpointMagic, 8);
  std::string cfg_str = cfg.to_json().dump();
  auto write_u64 = [&](uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 8);
  };
  write_u64(cfg_str.size());
  f.write(cfg_str.data(), static_cast<std::streamsize>(cfg_str.size()));
  write_u64(params.size());
  for (const auto& [name, arr] : params) {
    write_u64(name.size());
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(arr.rank());
    for (size_t i = 0; i < arr.rank(); ++i) write_u64(arr.dim(i));
    static_assert(sizeof(double) == 8);
    f.write(reinterpret_cast<const char*>(arr.data()),
            static_cast<std::streamsize>(arr.numel() * 8));
  }
  if (!f) throw IoError("save_checkpoint: short write to " + path);
}

inline std::pair<EncoderConfig, ParamMap> load_checkpoint(
    const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (f.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw IoError("load_checkpoint: " + path + " is not a checkpoint file");
  }
  auto read_u64 = [&]() {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    if (f.gcount() != 8) throw IoError("load_checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
  };
  uint64_t cfg_len = read_u64();
  std::string cfg_str(cfg_len, '\0');
  f.read(cfg_str.data(), static_cast<std::streamsize>(cfg_len));
  EncoderConfig cfg = EncoderConfig::from_json(nlohmann::json::parse(cfg_str));
  uint64_t n_params = read_u64();
  ParamMap params;
  for (uint64_t t = 0; t < n_params; ++t) {
    uint64_t name_len = read_u64();
    std::string name(name_len, '\0');
    f.read(name.data(), static_cast<std::streamsize>(name_len));
    uint64_t rank = read_u64();
    Shape shape(rank);
    for (uint64_t i = 0; i < rank; ++i) shape[i] = read_u64();
    Array arr(shape);
    f.read(reinterpret_cast<char*>(arr.data()),
           static_cast<std::streamsize>(arr.numel() * 8));
    if (static_cast<size_t>(f.gcount()) != arr.numel() * 8) {
      throw IoError("load_checkpoint: truncated tensor " + name);
    }
    params.emplace(std::move(name), std::move(arr));
  }
  return {cfg, params};
}

}  // namespace crtrain
