// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "darwin/checkpoint.hpp"
#include "darwin/core/error.hpp"
#include "darwin/fitness/toy_model.hpp"
#include "darwin/mri.hpp"

namespace darwin::toy {

/// Activation dump for the MRI probe term: per category and layer, the mean
/// over samples of the final-position residual stream after that layer.
/// Texts are byte-tokenized and truncated to their last context_length
/// tokens. Categories without usable samples are skipped and reported in
/// `warnings`.
inline Checkpoint emit_probe_dump(const Checkpoint& ckpt, const ToyModelSpec& spec, const ProbeManifest& manifest,
                                  std::vector<std::string>* warnings = nullptr) {
  const ToyModel model(ckpt, spec);
  Checkpoint dump;
  const auto d = static_cast<std::uint64_t>(spec.embed_dim);
  bool generic = false;
  for (auto cat : kProbeCategories) {
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(spec.layer_count),
                                          std::vector<double>(d, 0.0));
    int used = 0;
    for (const auto& text : manifest.texts(cat)) {
      auto tokens = tokenize_bytes(text, spec.vocab_size);
      if (tokens.empty()) continue;
      if (tokens.size() > static_cast<std::size_t>(spec.context_length)) {
        tokens.erase(tokens.begin(), tokens.end() - spec.context_length);
      }
      const auto res = model.forward(tokens, true);
      const auto last = static_cast<Eigen::Index>(tokens.size()) - 1;
      for (int l = 0; l < spec.layer_count; ++l) {
        const auto& h = res.layer_outputs[static_cast<std::size_t>(l)];
        auto& acc = sums[static_cast<std::size_t>(l)];
        for (std::uint64_t k = 0; k < d; ++k) acc[k] += h(last, static_cast<Eigen::Index>(k));
      }
      ++used;
    }
    if (used == 0) {
      if (warnings) warnings->push_back("probe category " + std::string(category_name(cat)) + " has no usable samples; omitted");
      continue;
    }
    if (cat == ProbeCategory::kGeneric) generic = true;
    for (int l = 0; l < spec.layer_count; ++l) {
      std::vector<float> mean(d);
      for (std::uint64_t k = 0; k < d; ++k) {
        mean[k] = static_cast<float>(sums[static_cast<std::size_t>(l)][k] / used);
      }
      dump.insert(probe_tensor_name(cat, l), Tensor({d}, std::move(mean)));
    }
  }
  if (!generic) fail(ErrorCode::kMissingTensor, "probe manifest yields no GENERIC activations");
  return dump;
}

/// A small built-in manifest covering all six categories.
inline ProbeManifest default_probe_manifest() {
  using C = ProbeCategory;
  ProbeManifest m;
  m.samples = {
      {C::kReasoning, "If a train leaves at noon and travels 60 km per hour, where is it at three?"},
      {C::kReasoning, "Which of the two options follows from the premises, and why?"},
      {C::kCode, "for (int i = 0; i < n; ++i) { total += values[i]; }"},
      {C::kCode, "def merge(a, b):\n    return [x + y for x, y in zip(a, b)]"},
      {C::kLogic, "All birds can fly. Penguins are birds. Therefore penguins can fly?"},
      {C::kLogic, "If P implies Q and Q is false, then P is false."},
      {C::kMultilingualKo, "오늘 날씨가 정말 좋네요. 산책하러 갈까요?"},
      {C::kMultilingualKo, "이 문제의 정답은 무엇입니까?"},
      {C::kMultilingualEn, "The quick brown fox jumps over the lazy dog."},
      {C::kMultilingualEn, "Please summarise the main argument of this passage."},
      {C::kGeneric, "Hello, how are you today?"},
      {C::kGeneric, "This is a plain sentence with nothing special in it."},
  };
  return m;
}

}  // namespace darwin::toy
