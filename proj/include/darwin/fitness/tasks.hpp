// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Multiple-choice task sets scored by summed log-probability under the toy
// model, and the per-question seeding rule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "darwin/checkpoint.hpp"
#include "darwin/core/error.hpp"
#include "darwin/core/md5.hpp"
#include "darwin/core/rng.hpp"
#include "darwin/evolution.hpp"
#include "darwin/fitness/toy_model.hpp"

namespace darwin::toy {

/// MD5 of the UTF-8 bytes of `q`, read as a big-endian integer, mod 2^32
/// (that is, the last four digest bytes).
inline std::uint32_t question_seed(std::string_view q) {
  const Md5Digest d = md5(q);
  return (std::uint32_t{d[12]} << 24) | (std::uint32_t{d[13]} << 16) | (std::uint32_t{d[14]} << 8) |
         std::uint32_t{d[15]};
}

struct ToyTaskItem {
  std::string family;
  std::vector<int> prompt;
  std::vector<std::vector<int>> candidates;
  int correct = 0;
  std::string text;  // seeds per-item randomness; rendered from the prompt when empty

  std::string seed_text() const {
    if (!text.empty()) return text;
    std::string out = family + ":";
    for (int t : prompt) out += " " + std::to_string(t);
    return out;
  }
};

struct ToyTaskSet {
  std::vector<ToyTaskItem> items;

  void validate() const {
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& it = items[i];
      const std::string where = "task item " + std::to_string(i);
      if (it.prompt.empty()) fail(ErrorCode::kInvalidArgument, where + ": empty prompt");
      if (it.candidates.size() < 2) fail(ErrorCode::kInvalidArgument, where + ": needs >= 2 candidates");
      if (it.correct < 0 || it.correct >= static_cast<int>(it.candidates.size())) {
        fail(ErrorCode::kInvalidArgument, where + ": correct index out of range");
      }
      for (const auto& c : it.candidates) {
        if (c.empty()) fail(ErrorCode::kInvalidArgument, where + ": empty candidate");
      }
    }
  }

  ToyTaskSet family(std::string_view name) const {
    ToyTaskSet out;
    for (const auto& it : items) {
      if (it.family == name) out.items.push_back(it);
    }
    return out;
  }

  ToyTaskSet& append(const ToyTaskSet& other) {
    items.insert(items.end(), other.items.begin(), other.items.end());
    return *this;
  }
};

inline void to_json(nlohmann::json& j, const ToyTaskItem& it) {
  j = {{"family", it.family}, {"prompt", it.prompt}, {"candidates", it.candidates}, {"correct", it.correct}};
  if (!it.text.empty()) j["text"] = it.text;
}

inline void from_json(const nlohmann::json& j, ToyTaskItem& it) {
  it.family = j.at("family").get<std::string>();
  it.prompt = j.at("prompt").get<std::vector<int>>();
  it.candidates = j.at("candidates").get<std::vector<std::vector<int>>>();
  it.correct = j.at("correct").get<int>();
  it.text = j.value("text", std::string());
}

inline void to_json(nlohmann::json& j, const ToyTaskSet& s) { j = {{"items", s.items}}; }

inline void from_json(const nlohmann::json& j, ToyTaskSet& s) {
  try {
    s.items = j.at("items").get<std::vector<ToyTaskItem>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed task set: ") + e.what());
  }
  s.validate();
}

namespace detail {
inline std::vector<double> log_softmax_row(const RowMatrix& logits, Eigen::Index row) {
  const auto r = logits.row(row);
  const double mx = r.maxCoeff();
  double z = 0;
  for (Eigen::Index v = 0; v < r.size(); ++v) z += std::exp(double{r(v)} - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(static_cast<std::size_t>(r.size()));
  for (Eigen::Index v = 0; v < r.size(); ++v) out[static_cast<std::size_t>(v)] = r(v) - lz;
  return out;
}
}  // namespace detail

/// Summed log-probability of each candidate continuation of the prompt.
inline std::vector<double> candidate_logprobs(const ToyModel& model, const ToyTaskItem& item) {
  std::vector<double> out(item.candidates.size());
  const bool single = std::all_of(item.candidates.begin(), item.candidates.end(),
                                  [](const auto& c) { return c.size() == 1; });
  const auto last = static_cast<Eigen::Index>(item.prompt.size()) - 1;
  if (single) {
    const auto lp = detail::log_softmax_row(model.forward(item.prompt).logits, last);
    for (std::size_t c = 0; c < item.candidates.size(); ++c) {
      const int tok = item.candidates[c][0];
      if (tok < 0 || tok >= model.spec().vocab_size) fail(ErrorCode::kInvalidArgument, "candidate token out of range");
      out[c] = lp[static_cast<std::size_t>(tok)];
    }
    return out;
  }
  for (std::size_t c = 0; c < item.candidates.size(); ++c) {
    const auto& cand = item.candidates[c];
    std::vector<int> seq = item.prompt;
    seq.insert(seq.end(), cand.begin(), cand.end() - 1);
    const RowMatrix logits = model.forward(seq).logits;
    double total = 0;
    for (std::size_t k = 0; k < cand.size(); ++k) {
      const auto lp = detail::log_softmax_row(logits, last + static_cast<Eigen::Index>(k));
      if (cand[k] < 0 || cand[k] >= model.spec().vocab_size) {
        fail(ErrorCode::kInvalidArgument, "candidate token out of range");
      }
      total += lp[static_cast<std::size_t>(cand[k])];
    }
    out[c] = total;
  }
  return out;
}

/// True when the correct candidate has the strictly highest score. The
/// candidates are visited in an order drawn from question_seed, so any
/// per-item randomness is fixed by the question text.
inline bool item_correct(const ToyModel& model, const ToyTaskItem& item) {
  const auto scores = candidate_logprobs(model, item);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  RandomStream rng(question_seed(item.seed_text()));
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t best = order.front();
  bool tie = false;
  for (std::size_t k = 1; k < order.size(); ++k) {
    const std::size_t c = order[k];
    if (scores[c] > scores[best]) {
      best = c;
      tie = false;
    } else if (scores[c] == scores[best]) {
      tie = true;
    }
  }
  return !tie && best == static_cast<std::size_t>(item.correct);
}

inline double toy_eval(const ToyModel& model, const ToyTaskSet& tasks) {
  if (tasks.items.empty()) fail(ErrorCode::kInvalidArgument, "task set is empty");
  std::size_t correct = 0;
  for (const auto& item : tasks.items) correct += item_correct(model, item) ? 1 : 0;
  return double(correct) / double(tasks.items.size());
}

inline double toy_eval(const Checkpoint& ckpt, const ToyModelSpec& spec, const ToyTaskSet& tasks) {
  return toy_eval(ToyModel(ckpt, spec), tasks);
}

/// Phase-2 evaluator backed by toy_eval. Deterministic, so the n runs of a
/// candidate all carry the same value.
class ToyEvaluator final : public ModelEvaluator {
 public:
  ToyEvaluator(ToyModelSpec spec, ToyTaskSet tasks) : spec_(spec), tasks_(std::move(tasks)) {
    spec_.validate();
    tasks_.validate();
  }

  double score(const Checkpoint& merged, int) override { return toy_eval(merged, spec_, tasks_); }
  bool deterministic() const override { return true; }

 private:
  ToyModelSpec spec_;
  ToyTaskSet tasks_;
};

}  // namespace darwin::toy
