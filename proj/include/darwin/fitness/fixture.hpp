// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Complementary parents built by hand. The base routes token identity into
// the first half of the residual (one-hot embeddings, one MLP detector unit
// per token) and reads answers out of the second half (random unit codes in
// the unembedding). Each parent adds down-projection columns for its own,
// disjoint set of detector units, writing the code of the answer of its task
// family; neither parent knows the other's family.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "darwin/checkpoint.hpp"
#include "darwin/core/rng.hpp"
#include "darwin/fitness/tasks.hpp"
#include "darwin/fitness/toy_model.hpp"

namespace darwin::toy {

struct ComplementaryFixture {
  ToyModelSpec spec;
  Checkpoint base;
  Checkpoint father;  // family "copy": answer = x for x in [0, 32)
  Checkpoint mother;  // family "mirror": answer = 95 - x for x in [32, 64)
  ToyTaskSet copy_tasks;
  ToyTaskSet mirror_tasks;

  ToyTaskSet combined() const {
    ToyTaskSet all = copy_tasks;
    return all.append(mirror_tasks);
  }
};

inline ToyModelSpec complementary_spec() {
  ToyModelSpec s;
  s.vocab_size = 64;
  s.embed_dim = 128;
  s.layer_count = 6;
  s.heads = 4;
  s.ffn_dim = 128;
  s.context_length = 16;
  return s;
}

namespace detail {

inline int copy_answer(int x) { return x; }
inline int mirror_answer(int x) { return 95 - x; }

inline ToyTaskSet make_family(const std::string& family, int lo, int hi, int (*answer)(int), int repeats,
                              RandomStream& rng, int vocab) {
  ToyTaskSet out;
  std::vector<int> answers;
  for (int x = lo; x < hi; ++x) answers.push_back(answer(x));
  for (int rep = 0; rep < repeats; ++rep) {
    for (int x = lo; x < hi; ++x) {
      ToyTaskItem it;
      it.family = family;
      it.prompt = {static_cast<int>(rng.below(std::uint64_t(vocab))), static_cast<int>(rng.below(std::uint64_t(vocab))), x};
      const int correct = answer(x);
      std::set<int> chosen = {correct};
      while (chosen.size() < 4) chosen.insert(answers[rng.below(answers.size())]);
      std::vector<int> cands(chosen.begin(), chosen.end());
      std::shuffle(cands.begin(), cands.end(), rng);
      for (std::size_t c = 0; c < cands.size(); ++c) {
        it.candidates.push_back({cands[c]});
        if (cands[c] == correct) it.correct = static_cast<int>(c);
      }
      out.items.push_back(std::move(it));
    }
  }
  return out;
}

inline void add_noise(Checkpoint& ckpt, const std::string& name, double scale, std::uint64_t seed) {
  const Tensor& t = ckpt.at(name);
  std::vector<float> data = t.data;
  RandomStream rng(tensor_seed(seed, name));
  for (auto& x : data) x = static_cast<float>(x + scale * rng.normal());
  ckpt.insert_or_assign(name, Tensor(t.shape, std::move(data)));
}

}  // namespace detail

/// Deterministic in `seed`.
inline ComplementaryFixture make_complementary_fixture(std::uint64_t seed = 2026) {
  ComplementaryFixture fx;
  fx.spec = complementary_spec();
  const ToyModelSpec& s = fx.spec;
  const int V = s.vocab_size, D = s.embed_dim, F = s.ffn_dim, L = s.layer_count;
  const int half = D / 2;  // residual dims [0, half) carry token identity, [half, D) carry answers

  Checkpoint base;
  for (const auto& [name, shape] : expected_tensors(s)) {
    base.insert(name, Tensor::zeros(shape));
  }
  auto fill = [&](const std::string& name, auto&& value) {
    const Tensor& t = base.at(name);
    std::vector<float> data(t.data.size());
    const std::size_t cols = t.shape.size() == 2 ? t.shape[1] : 1;
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(value(i / cols, i % cols));
    base.insert_or_assign(name, Tensor(t.shape, std::move(data)));
  };

  // Unit answer codes in the upper half of the residual.
  std::vector<std::vector<double>> code(static_cast<std::size_t>(V), std::vector<double>(static_cast<std::size_t>(D)));
  {
    RandomStream rng(derive_seed(seed, 1));
    for (auto& c : code) {
      double norm = 0;
      for (int k = half; k < D; ++k) {
        c[static_cast<std::size_t>(k)] = rng.normal();
        norm += c[static_cast<std::size_t>(k)] * c[static_cast<std::size_t>(k)];
      }
      for (auto& v : c) v /= std::sqrt(norm);
    }
  }
  fill(names::kTokenEmbed, [&](std::size_t v, std::size_t k) { return v == k ? 1.0 : 0.0; });
  fill(names::kUnembed, [&](std::size_t v, std::size_t k) { return code[v][k]; });
  fill(names::kFinalNorm, [](std::size_t, std::size_t) { return 1.0; });
  for (int l = 0; l < L; ++l) {
    fill(names::layer(l, names::kInputNorm), [](std::size_t, std::size_t) { return 1.0; });
    fill(names::layer(l, names::kMidNorm), [](std::size_t, std::size_t) { return 1.0; });
    // Detector unit j fires on token j.
    fill(names::layer(l, names::kUp), [&](std::size_t j, std::size_t k) {
      return (j < std::size_t(V) && j == k) ? 1.0 : 0.0;
    });
  }
  const std::uint64_t base_seed = derive_seed(seed, 2);
  detail::add_noise(base, names::kTokenEmbed, 0.01, base_seed);
  detail::add_noise(base, names::kPositionEmbed, 0.01, base_seed);
  for (int l = 0; l < L; ++l) {
    for (const char* sub : {names::kQ, names::kK, names::kV}) {
      detail::add_noise(base, names::layer(l, sub), 0.05, base_seed);
    }
    detail::add_noise(base, names::layer(l, names::kO), 0.02, base_seed);
    detail::add_noise(base, names::layer(l, names::kUp), 0.01, base_seed);
    detail::add_noise(base, names::layer(l, names::kDown), 0.01, base_seed);
  }

  // Skill deltas: column j of every down projection writes the answer code
  // for input token j, spread evenly over the layers.
  auto make_parent = [&](int lo, int hi, int (*answer)(int), std::uint64_t drift_seed) {
    Checkpoint p = base;
    const double gain = 1.0 / L;
    for (int l = 0; l < L; ++l) {
      const std::string name = names::layer(l, names::kDown);
      std::vector<float> data = p.at(name).data;
      for (int j = lo; j < hi; ++j) {
        const auto& c = code[static_cast<std::size_t>(answer(j))];
        for (int k = 0; k < D; ++k) {
          data[static_cast<std::size_t>(k) * F + static_cast<std::size_t>(j)] +=
              static_cast<float>(gain * c[static_cast<std::size_t>(k)]);
        }
      }
      p.insert_or_assign(name, Tensor(p.at(name).shape, std::move(data)));
      // Unrelated fine-tuning drift in attention.
      for (const char* sub : {names::kQ, names::kK, names::kV, names::kO}) {
        detail::add_noise(p, names::layer(l, sub), 0.005, drift_seed);
      }
    }
    return p;
  };
  fx.base = base;
  fx.father = make_parent(0, V / 2, detail::copy_answer, derive_seed(seed, 3));
  fx.mother = make_parent(V / 2, V, detail::mirror_answer, derive_seed(seed, 4));

  RandomStream task_rng(derive_seed(seed, 5));
  fx.copy_tasks = detail::make_family("copy", 0, V / 2, detail::copy_answer, 2, task_rng, V);
  fx.mirror_tasks = detail::make_family("mirror", V / 2, V, detail::mirror_answer, 2, task_rng, V);
  return fx;
}

}  // namespace darwin::toy
