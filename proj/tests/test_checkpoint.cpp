// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>

#include "darwin/checkpoint.hpp"
#include "test_support.hpp"

namespace darwin {
namespace {

using testing::TempDir;

std::vector<std::uint8_t> container(const std::string& header, const std::vector<std::uint8_t>& data) {
  std::vector<std::uint8_t> out(8);
  std::uint64_t n = header.size();
  std::memcpy(out.data(), &n, 8);
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

std::vector<std::uint8_t> floats(std::initializer_list<float> v) {
  std::vector<std::uint8_t> out(v.size() * 4);
  std::memcpy(out.data(), std::data(v), out.size());
  return out;
}

ErrorCode decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return ErrorCode::kUsage;
}

Checkpoint toy_checkpoint(int n_tensors, std::uint64_t seed) {
  Checkpoint c;
  for (int i = 0; i < n_tensors; ++i) {
    const Shape shape = {std::uint64_t(1 + i % 5), std::uint64_t(2 + i % 3)};
    c.insert("model.layers." + std::to_string(i / 4) + ".t" + std::to_string(i), testing::random_tensor(shape, seed + i));
  }
  return c;
}

TEST(Decode, SingleTensor) {
  const auto bytes = container(R"({"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}})", floats({1, 2, 3, 4}));
  const Checkpoint c = decode_checkpoint(bytes);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.at("w").shape, (Shape{2, 2}));
  EXPECT_EQ(c.at("w").data, (std::vector<float>{1, 2, 3, 4}));
}

TEST(Decode, HalfPrecisionUpcast) {
  // 1.0, -2.0, 0.5, 65504 (max half), smallest subnormal 2^-24
  const std::vector<std::uint8_t> data = {0x00, 0x3C, 0x00, 0xC0, 0x00, 0x38, 0xFF, 0x7B, 0x01, 0x00};
  const auto bytes = container(R"({"h":{"dtype":"F16","shape":[5],"data_offsets":[0,10]}})", data);
  const Checkpoint c = decode_checkpoint(bytes);
  EXPECT_EQ(c.at("h").data, (std::vector<float>{1.0f, -2.0f, 0.5f, 65504.0f, std::ldexp(1.0f, -24)}));
}

TEST(Decode, HalfSpecialValues) {
  EXPECT_TRUE(std::isinf(half_to_float(0x7C00)));
  EXPECT_TRUE(std::isnan(half_to_float(0x7E00)));
  EXPECT_EQ(std::signbit(half_to_float(0x8000)), true);
}

TEST(Decode, RejectsOverlap) {
  const auto bytes = container(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
                               R"("b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})",
                               floats({1, 2, 3}));
  EXPECT_EQ(decode_error(bytes), ErrorCode::kOverlappingRanges);
}

TEST(Decode, RejectsGap) {
  const auto bytes = container(R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
                               R"("b":{"dtype":"F32","shape":[1],"data_offsets":[8,12]}})",
                               floats({1, 2, 3}));
  EXPECT_EQ(decode_error(bytes), ErrorCode::kRangeGap);
}

TEST(Decode, RejectsTrailingBytes) {
  const auto bytes = container(R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})", floats({1, 2}));
  EXPECT_EQ(decode_error(bytes), ErrorCode::kRangeGap);
}

TEST(Decode, RejectsOutOfRange) {
  const auto bytes = container(R"({"a":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}})", floats({1, 2}));
  EXPECT_EQ(decode_error(bytes), ErrorCode::kOffsetOutOfRange);
}

TEST(Decode, RejectsDuplicateNames) {
  const auto bytes = container(R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
                               R"("a":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})",
                               floats({1, 2}));
  EXPECT_EQ(decode_error(bytes), ErrorCode::kDuplicateName);
}

TEST(Decode, RejectsUnsupportedDtype) {
  const auto bytes = container(R"({"a":{"dtype":"I8","shape":[4],"data_offsets":[0,4]}})", floats({1}));
  EXPECT_EQ(decode_error(bytes), ErrorCode::kUnsupportedDtype);
}

TEST(Decode, RejectsSizeMismatch) {
  const auto bytes = container(R"({"a":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}})", floats({1, 2}));
  EXPECT_EQ(decode_error(bytes), ErrorCode::kMalformedHeader);
}

TEST(Decode, RejectsMalformedHeaders) {
  EXPECT_EQ(decode_error({1, 2, 3}), ErrorCode::kMalformedHeader);
  EXPECT_EQ(decode_error(container("{not json", {})), ErrorCode::kMalformedHeader);
  EXPECT_EQ(decode_error(container("[1,2]", {})), ErrorCode::kMalformedHeader);
  EXPECT_EQ(decode_error(container(R"({"a":{"dtype":"F32","shape":[1]}})", floats({1}))), ErrorCode::kMalformedHeader);
  EXPECT_EQ(decode_error(container(R"({"a":{"dtype":"F32","shape":[-1],"data_offsets":[0,4]}})", floats({1}))),
            ErrorCode::kMalformedHeader);
  auto truncated = container("{}", {});
  truncated[0] = 200;
  EXPECT_EQ(decode_error(truncated), ErrorCode::kMalformedHeader);
}

TEST(Decode, ErrorMentionsByteOffset) {
  const auto bytes = container(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
                               R"("b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})",
                               floats({1, 2, 3}));
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }
}

TEST(Encode, EmptyCheckpoint) {
  const Checkpoint empty;
  const auto bytes = encode_checkpoint(empty);
  EXPECT_EQ(decode_checkpoint(bytes).size(), 0u);
}

TEST(Encode, HeaderKeysSorted) {
  Checkpoint c;
  c.insert("zeta", Tensor({1}, {1}));
  c.insert("alpha", Tensor({1}, {2}));
  c.insert("mid", Tensor({1}, {3}));
  const auto bytes = encode_checkpoint(c);
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data(), 8);
  const std::string header(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(n));
  EXPECT_LT(header.find("alpha"), header.find("mid"));
  EXPECT_LT(header.find("mid"), header.find("zeta"));
}

TEST(Encode, RoundTripIsBitExact) {
  TempDir dir("ckpt");
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Checkpoint c = toy_checkpoint(24, seed * 100);
    c.insert("special", Tensor({4}, {0.0f, -0.0f, std::numeric_limits<float>::denorm_min(), -1e30f}));
    const auto path = dir / ("c" + std::to_string(seed) + ".safetensors");
    write_checkpoint(c, path);
    const Checkpoint back = read_checkpoint(path);
    ASSERT_EQ(back.names(), c.names());
    for (const auto& [name, t] : c) {
      ASSERT_EQ(back.at(name).shape, t.shape);
      ASSERT_EQ(std::memcmp(back.at(name).data.data(), t.data.data(), t.data.size() * 4), 0) << name;
    }
  }
}

TEST(Encode, WritingTwiceIsByteIdentical) {
  TempDir dir("ckpt2");
  const Checkpoint c = toy_checkpoint(10, 5);
  write_checkpoint(c, dir / "a");
  write_checkpoint(c, dir / "b");
  EXPECT_EQ(read_file_bytes(dir / "a"), read_file_bytes(dir / "b"));
}

TEST(Io, MissingFileIsIoError) {
  try {
    read_checkpoint("/nonexistent/really/not.safetensors");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

TEST(Checkpoint, RejectsDuplicateInsert) {
  Checkpoint c;
  c.insert("a", Tensor({1}, {1}));
  EXPECT_THROW(c.insert("a", Tensor({1}, {2})), Error);
}

TEST(Checkpoint, IterationIsLexicographic) {
  Checkpoint c;
  for (const char* n : {"b", "a.c", "a", "B"}) c.insert(n, Tensor({1}, {0}));
  EXPECT_EQ(c.names(), (std::vector<std::string>{"B", "a", "a.c", "b"}));
}

TEST(Topology, ClassifiesByName) {
  EXPECT_EQ(classify_tensor("model.layers.3.self_attn.q_proj.weight"), (TensorClass{ComponentClass::kAttention, 3}));
  EXPECT_EQ(classify_tensor("model.layers.0.attention.wq"), (TensorClass{ComponentClass::kAttention, 0}));
  EXPECT_EQ(classify_tensor("model.layers.11.mlp.up_proj.weight"), (TensorClass{ComponentClass::kFfn, 11}));
  EXPECT_EQ(classify_tensor("h.layers.2.ffn.w1"), (TensorClass{ComponentClass::kFfn, 2}));
  EXPECT_EQ(classify_tensor("model.layers.2.input_layernorm.weight"), (TensorClass{ComponentClass::kNorm, 2}));
  EXPECT_EQ(classify_tensor("model.embed_tokens.weight"), (TensorClass{ComponentClass::kEmbedding, std::nullopt}));
  EXPECT_EQ(classify_tensor("model.norm.weight"), (TensorClass{ComponentClass::kOther, std::nullopt}));
  EXPECT_EQ(classify_tensor("lm_head.weight"), (TensorClass{ComponentClass::kOther, std::nullopt}));
  EXPECT_EQ(classify_tensor("model.layers.4.router.weight"), (TensorClass{ComponentClass::kOther, 4}));
  EXPECT_EQ(classify_tensor("model.layers.x.mlp"), (TensorClass{ComponentClass::kOther, std::nullopt}));
}

TEST(Topology, LayerCountAndUniqueClassification) {
  const auto spec = testing::small_spec(5);
  const Checkpoint c = toy::random_checkpoint(spec, 1);
  const ModelTopology topo = c.topology();
  EXPECT_EQ(topo.layer_count, 5);
  EXPECT_EQ(topo.classes.size(), c.size());
  for (const auto& [name, cls] : topo.classes) {
    if (cls.layer) {
      EXPECT_GE(*cls.layer, 0);
      EXPECT_LT(*cls.layer, topo.layer_count);
    }
  }
}

TEST(Delta, ForcedArithmetic) {
  Checkpoint parent, base;
  parent.insert("t", Tensor({2}, {3, 5}));
  base.insert("t", Tensor({2}, {1, 2}));
  const DeltaMap d = tensor_delta(parent, base);
  EXPECT_EQ(d.deltas.at("t").data, (std::vector<double>{2, 3}));
}

TEST(Delta, IdentityIsZero) {
  const Checkpoint c = toy_checkpoint(8, 3);
  for (const auto& [name, d] : tensor_delta(c, c).deltas) {
    for (double x : d.data) EXPECT_EQ(x, 0.0) << name;
  }
}

TEST(Delta, ReconstructionIsExact) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Checkpoint base = toy_checkpoint(12, seed);
    const Checkpoint parent = testing::perturbed(base, seed + 50, 0.3);
    const DeltaMap d = tensor_delta(parent, base);
    for (const auto& [name, delta] : d.deltas) {
      const Tensor r = reconstruct(base.at(name), delta);
      EXPECT_EQ(std::memcmp(r.data.data(), parent.at(name).data.data(), r.data.size() * 4), 0) << name;
    }
  }
}

TEST(Delta, ExcludesNonSharedAndMismatched) {
  Checkpoint parent, base;
  parent.insert("shared", Tensor({1}, {1}));
  parent.insert("only_parent", Tensor({1}, {1}));
  parent.insert("reshaped", Tensor({2}, {1, 1}));
  base.insert("shared", Tensor({1}, {0}));
  base.insert("reshaped", Tensor({1}, {0}));
  base.insert("only_base", Tensor({1}, {0}));
  const DeltaMap d = tensor_delta(parent, base);
  EXPECT_EQ(d.deltas.size(), 1u);
  EXPECT_TRUE(d.deltas.contains("shared"));
  EXPECT_EQ(d.excluded.size(), 3u);
}

TEST(Delta, NothingSharedIsIncompatible) {
  Checkpoint a, b;
  a.insert("x", Tensor({1}, {1}));
  b.insert("y", Tensor({1}, {1}));
  try {
    tensor_delta(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIncompatible);
  }
}

TEST(ValidatePair, Cases) {
  const Checkpoint c = toy_checkpoint(6, 9);
  const CompatReport same = validate_pair(c, c);
  EXPECT_TRUE(same.homologous);
  EXPECT_TRUE(same.mismatches.empty());
  EXPECT_EQ(same.shared.size(), c.size());

  Checkpoint extra = c;
  extra.insert("x", Tensor({1}, {0}));
  EXPECT_EQ(validate_pair(extra, c).only_a, std::vector<std::string>{"x"});

  Checkpoint a, b;
  a.insert("w", Tensor::zeros({4, 4}));
  b.insert("w", Tensor::zeros({4, 8}));
  const CompatReport r = validate_pair(a, b);
  ASSERT_EQ(r.mismatches.size(), 1u);
  EXPECT_EQ(r.mismatches[0].name, "w");
  EXPECT_FALSE(r.homologous);
}

}  // namespace
}  // namespace darwin
