// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Small pre-norm decoder used as a desk-scale merge substrate:
// token + learned position embedding, per layer RMSNorm -> causal MHA ->
// residual, RMSNorm -> GELU MLP -> residual, final RMSNorm, unembedding.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "darwin/checkpoint.hpp"
#include "darwin/core/error.hpp"
#include "darwin/core/rng.hpp"

namespace darwin::toy {

struct ToyModelSpec {
  int vocab_size = 64;
  int embed_dim = 32;
  int layer_count = 4;
  int heads = 4;
  int ffn_dim = 64;
  int context_length = 32;

  int head_dim() const { return embed_dim / heads; }

  void validate() const {
    if (vocab_size < 1 || embed_dim < 1 || layer_count < 1 || heads < 1 || ffn_dim < 1 ||
        context_length < 1) {
      fail(ErrorCode::kInvalidArgument, "toy model extents must all be >= 1");
    }
    if (embed_dim % heads != 0) {
      fail(ErrorCode::kInvalidArgument, "embed_dim must be divisible by heads");
    }
  }

  bool operator==(const ToyModelSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const ToyModelSpec& s) {
  j = {{"vocab_size", s.vocab_size}, {"embed_dim", s.embed_dim}, {"layer_count", s.layer_count},
       {"heads", s.heads},           {"ffn_dim", s.ffn_dim},     {"context_length", s.context_length}};
}

inline void from_json(const nlohmann::json& j, ToyModelSpec& s) {
  ToyModelSpec d;
  s.vocab_size = j.value("vocab_size", d.vocab_size);
  s.embed_dim = j.value("embed_dim", d.embed_dim);
  s.layer_count = j.value("layer_count", d.layer_count);
  s.heads = j.value("heads", d.heads);
  s.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  s.context_length = j.value("context_length", d.context_length);
  s.validate();
}

namespace names {
inline std::string layer(int i, const char* sub) {
  return "model.layers." + std::to_string(i) + "." + sub;
}
inline const std::string kTokenEmbed = "model.embed_tokens.weight";
inline const std::string kPositionEmbed = "model.embed_positions.weight";
inline const std::string kFinalNorm = "model.final_norm.weight";
inline const std::string kUnembed = "model.unembed.weight";
inline constexpr const char* kInputNorm = "input_norm.weight";
inline constexpr const char* kQ = "attn.q_proj.weight";
inline constexpr const char* kK = "attn.k_proj.weight";
inline constexpr const char* kV = "attn.v_proj.weight";
inline constexpr const char* kO = "attn.o_proj.weight";
inline constexpr const char* kMidNorm = "mid_norm.weight";
inline constexpr const char* kUp = "mlp.up_proj.weight";
inline constexpr const char* kDown = "mlp.down_proj.weight";
}  // namespace names

/// Every tensor name and shape a checkpoint for `spec` must carry.
inline std::vector<std::pair<std::string, Shape>> expected_tensors(const ToyModelSpec& spec) {
  const auto v = static_cast<std::uint64_t>(spec.vocab_size);
  const auto d = static_cast<std::uint64_t>(spec.embed_dim);
  const auto f = static_cast<std::uint64_t>(spec.ffn_dim);
  const auto c = static_cast<std::uint64_t>(spec.context_length);
  std::vector<std::pair<std::string, Shape>> out = {
      {names::kTokenEmbed, {v, d}},
      {names::kPositionEmbed, {c, d}},
      {names::kFinalNorm, {d}},
      {names::kUnembed, {v, d}},
  };
  for (int i = 0; i < spec.layer_count; ++i) {
    out.push_back({names::layer(i, names::kInputNorm), {d}});
    out.push_back({names::layer(i, names::kQ), {d, d}});
    out.push_back({names::layer(i, names::kK), {d, d}});
    out.push_back({names::layer(i, names::kV), {d, d}});
    out.push_back({names::layer(i, names::kO), {d, d}});
    out.push_back({names::layer(i, names::kMidNorm), {d}});
    out.push_back({names::layer(i, names::kUp), {f, d}});
    out.push_back({names::layer(i, names::kDown), {d, f}});
  }
  return out;
}

/// Random checkpoint: matrices ~ N(0, scale^2), norm gains 1.
inline Checkpoint random_checkpoint(const ToyModelSpec& spec, std::uint64_t seed, double scale = 0.1) {
  spec.validate();
  Checkpoint ckpt;
  for (const auto& [name, shape] : expected_tensors(spec)) {
    RandomStream rng(tensor_seed(seed, name));
    std::vector<float> data(shape_numel(shape));
    const bool gain = name.find("norm") != std::string::npos;
    for (auto& x : data) x = gain ? 1.0f : static_cast<float>(scale * rng.normal());
    ckpt.insert(name, Tensor(shape, std::move(data)));
  }
  return ckpt;
}

inline Checkpoint zero_checkpoint(const ToyModelSpec& spec) {
  spec.validate();
  Checkpoint ckpt;
  for (const auto& [name, shape] : expected_tensors(spec)) ckpt.insert(name, Tensor::zeros(shape));
  return ckpt;
}

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXf>;

struct ForwardResult {
  RowMatrix logits;                   // [positions, vocab]
  std::vector<RowMatrix> layer_outputs;  // per layer: residual stream [positions, embed_dim]
};

/// Read-only view binding a checkpoint to a spec. The checkpoint must
/// outlive the model.
class ToyModel {
 public:
  ToyModel(const Checkpoint& ckpt, const ToyModelSpec& spec) : spec_(spec) {
    spec.validate();
    for (const auto& [name, shape] : expected_tensors(spec)) {
      const Tensor* t = ckpt.find(name);
      if (!t) fail(ErrorCode::kMissingTensor, "toy model tensor missing: " + name);
      if (t->shape != shape) {
        fail(ErrorCode::kShapeMismatch, "toy model tensor '" + name + "' has shape " +
                                            shape_string(t->shape) + ", expected " + shape_string(shape));
      }
    }
    auto mat = [&](const std::string& name) {
      const Tensor& t = ckpt.at(name);
      return ConstMatrixMap(t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
                            static_cast<Eigen::Index>(t.shape[1]));
    };
    auto vec = [&](const std::string& name) {
      const Tensor& t = ckpt.at(name);
      return ConstVectorMap(t.data.data(), static_cast<Eigen::Index>(t.shape[0]));
    };
    token_embed_.emplace_back(mat(names::kTokenEmbed));
    position_embed_.emplace_back(mat(names::kPositionEmbed));
    unembed_.emplace_back(mat(names::kUnembed));
    final_norm_.emplace_back(vec(names::kFinalNorm));
    for (int i = 0; i < spec.layer_count; ++i) {
      layers_.push_back(Layer{vec(names::layer(i, names::kInputNorm)), mat(names::layer(i, names::kQ)),
                              mat(names::layer(i, names::kK)), mat(names::layer(i, names::kV)),
                              mat(names::layer(i, names::kO)), vec(names::layer(i, names::kMidNorm)),
                              mat(names::layer(i, names::kUp)), mat(names::layer(i, names::kDown))});
    }
  }

  const ToyModelSpec& spec() const { return spec_; }

  ForwardResult forward(std::span<const int> tokens, bool keep_layers = false) const {
    const auto T = static_cast<Eigen::Index>(tokens.size());
    if (T == 0) fail(ErrorCode::kInvalidArgument, "toy forward needs at least one token");
    if (T > spec_.context_length) {
      fail(ErrorCode::kInvalidArgument, "sequence of " + std::to_string(T) + " tokens exceeds context " +
                                            std::to_string(spec_.context_length));
    }
    const int d = spec_.embed_dim;
    RowMatrix x(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
      const int tok = tokens[static_cast<std::size_t>(t)];
      if (tok < 0 || tok >= spec_.vocab_size) fail(ErrorCode::kInvalidArgument, "token id out of range");
      x.row(t) = token_embed_[0].row(tok) + position_embed_[0].row(t);
    }

    ForwardResult out;
    const int hd = spec_.head_dim();
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));
    RowMatrix scores(T, T);
    for (const Layer& L : layers_) {
      RowMatrix h = rms_norm(x, L.input_norm);
      RowMatrix q = h * L.q.transpose();
      RowMatrix k = h * L.k.transpose();
      RowMatrix v = h * L.v.transpose();
      RowMatrix attn(T, d);
      for (int head = 0; head < spec_.heads; ++head) {
        const auto qh = q.middleCols(head * hd, hd);
        const auto kh = k.middleCols(head * hd, hd);
        const auto vh = v.middleCols(head * hd, hd);
        scores.noalias() = (qh * kh.transpose()) * inv_sqrt;
        for (Eigen::Index i = 0; i < T; ++i) {
          float mx = scores(i, 0);
          for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j));
          float z = 0;
          for (Eigen::Index j = 0; j <= i; ++j) {
            scores(i, j) = std::exp(scores(i, j) - mx);
            z += scores(i, j);
          }
          for (Eigen::Index j = 0; j <= i; ++j) scores(i, j) /= z;
          for (Eigen::Index j = i + 1; j < T; ++j) scores(i, j) = 0;
        }
        attn.middleCols(head * hd, hd).noalias() = scores * vh;
      }
      x.noalias() += attn * L.o.transpose();
      RowMatrix h2 = rms_norm(x, L.mid_norm);
      RowMatrix u = (h2 * L.up.transpose()).unaryExpr([](float a) { return gelu(a); });
      x.noalias() += u * L.down.transpose();
      if (keep_layers) out.layer_outputs.push_back(x);
    }
    RowMatrix hf = rms_norm(x, final_norm_[0]);
    out.logits = hf * unembed_[0].transpose();
    return out;
  }

  static float gelu(float a) {
    constexpr float kC = 0.7978845608028654f;  // sqrt(2 / pi)
    return 0.5f * a * (1.0f + std::tanh(kC * (a + 0.044715f * a * a * a)));
  }

  static RowMatrix rms_norm(const RowMatrix& x, const ConstVectorMap& gain) {
    RowMatrix out(x.rows(), x.cols());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      const float ms = x.row(t).squaredNorm() / static_cast<float>(x.cols());
      const float inv = 1.0f / std::sqrt(ms + 1e-5f);
      out.row(t) = (x.row(t) * inv).cwiseProduct(gain.transpose());
    }
    return out;
  }

 private:
  struct Layer {
    ConstVectorMap input_norm;
    ConstMatrixMap q, k, v, o;
    ConstVectorMap mid_norm;
    ConstMatrixMap up, down;
  };

  ToyModelSpec spec_;
  // Eigen maps have no default constructor; single-element vectors hold them.
  std::vector<ConstMatrixMap> token_embed_, position_embed_, unembed_;
  std::vector<ConstVectorMap> final_norm_;
  std::vector<Layer> layers_;
};

/// Logits [positions, vocab]; pure function of (checkpoint, tokens).
inline RowMatrix toy_forward(const Checkpoint& ckpt, const ToyModelSpec& spec, std::span<const int> tokens) {
  return ToyModel(ckpt, spec).forward(tokens).logits;
}

/// Byte-level tokenizer: each UTF-8 byte maps to byte % vocab_size.
inline std::vector<int> tokenize_bytes(std::string_view text, int vocab_size) {
  std::vector<int> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<int>(c) % vocab_size);
  return out;
}

}  // namespace darwin::toy
