#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "anchorlab/common/errors.hpp"
#include "anchorlab/nn/checkpoint.hpp"
#include "anchorlab/nn/gradcheck.hpp"
#include "anchorlab/nn/ops.hpp"
#include "anchorlab/nn/rng.hpp"

using namespace anchorlab;
using namespace anchorlab::nn;

namespace {

Tensor random_tensor(Shape s, RngStream& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(s));
  for (auto& v : t.data) v = static_cast<float>(rng.normal() * scale);
  return t;
}

ParamStore mlp_params(std::uint64_t seed) {
  RngStream rng(seed, Stream::kTest);
  ParamStore p;
  p.insert("l1.w", random_tensor({6, 12}, rng, 0.4));
  p.insert("l1.b", random_tensor({12}, rng, 0.1));
  p.insert("l2.w", random_tensor({12, 3}, rng, 0.4));
  p.insert("l2.b", random_tensor({3}, rng, 0.1));
  return p;
}

template <class T>
BasicTensor<T> fixed_batch(Shape s, std::uint64_t seed) {
  RngStream rng(seed, Stream::kTest);
  BasicTensor<T> t = BasicTensor<T>::zeros(std::move(s));
  for (auto& v : t.data) v = static_cast<T>(static_cast<float>(rng.normal()));
  return t;
}

struct MlpLoss {
  template <class T>
  Var<T> operator()(Graph<T>& g) const {
    auto x = g.constant(fixed_batch<T>({5, 6}, 11));
    auto y = g.constant(fixed_batch<T>({5, 3}, 12));
    auto h = gelu(linear(x, g.param("l1.w"), g.param("l1.b")));
    return mse(linear(h, g.param("l2.w"), g.param("l2.b")), y);
  }
};

ParamStore attn_params(std::uint64_t seed) {
  RngStream rng(seed, Stream::kTest);
  ParamStore p;
  for (const char* n : {"q", "k", "v", "o"}) p.insert(std::string(n) + ".w", random_tensor({8, 8}, rng, 0.35));
  return p;
}

struct AttentionNorm {
  template <class T>
  Var<T> operator()(Graph<T>& g) const {
    auto x = layer_norm(g.constant(fixed_batch<T>({2, 6, 8}, 21)));
    auto q = matmul(x, g.param("q.w"));
    auto k = matmul(x, g.param("k.w"));
    auto v = matmul(x, g.param("v.w"));
    auto o = matmul(attention(q, k, v, 2), g.param("o.w"));
    return sum(mul(o, o));
  }
};

}  // namespace

TEST(Ops, SoftmaxOfEqualLogitsIsUniform) {
  Graph<float> g;
  auto s = softmax(g.constant(Tensor({3}, {0, 0, 0})));
  for (float v : s.value().data) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  RngStream rng(3, Stream::kTest);
  Graph<float> g;
  auto s = softmax(g.constant(random_tensor({7, 9}, rng, 5.0)));
  for (int r = 0; r < 7; ++r) {
    double total = 0;
    for (int c = 0; c < 9; ++c) total += s.value().data[static_cast<std::size_t>(r * 9 + c)];
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Ops, LayerNormOfConstantIsZero) {
  Graph<float> g;
  auto y = layer_norm(g.constant(Tensor::full({2, 5}, 3.25f)));
  for (float v : y.value().data) EXPECT_EQ(v, 0.0f);
}

TEST(Ops, AdaptivePoolBinAverages) {
  Graph<float> g;
  auto y = adaptive_mean_pool(g.constant(Tensor({4}, {1, 2, 3, 4})), 0, 2);
  EXPECT_EQ(y.shape(), Shape({2}));
  EXPECT_FLOAT_EQ(y.value().data[0], 1.5f);
  EXPECT_FLOAT_EQ(y.value().data[1], 3.5f);
}

TEST(Ops, AdaptivePoolOfConstantIsConstant) {
  for (int L = 1; L <= 13; ++L) {
    for (int k = 1; k <= 9; ++k) {
      Graph<float> g;
      auto y = adaptive_mean_pool(g.constant(Tensor::full({2, L, 3}, 0.7f)), 1, k);
      ASSERT_EQ(y.shape(), Shape({2, k, 3}));
      for (float v : y.value().data) EXPECT_NEAR(v, 0.7f, 1e-6) << "L=" << L << " k=" << k;
    }
  }
}

TEST(Ops, ShapeMismatchNamesBothShapes) {
  Graph<float> g;
  auto a = g.constant(Tensor::zeros({2, 3}));
  auto b = g.constant(Tensor::zeros({4, 5}));
  try {
    matmul(a, b);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4, 5]"), std::string::npos) << msg;
  }
}

TEST(Ops, SliceConcatRoundTrip) {
  RngStream rng(4, Stream::kTest);
  Graph<float> g;
  auto x = g.constant(random_tensor({2, 5, 3}, rng));
  auto y = concat<float>({slice(x, 1, 0, 2), slice(x, 1, 2, 3)}, 1);
  EXPECT_EQ(y.value(), x.value());
}

TEST(Ops, SinusoidalEmbeddingIsBoundedAndDistinct) {
  Graph<float> g;
  auto e = sinusoidal_embedding(g, {0, 1, 50, 99}, 16);
  ASSERT_EQ(e.shape(), Shape({4, 16}));
  for (float v : e.value().data) EXPECT_LE(std::abs(v), 1.0f);
  EXPECT_NE(slice(e, 0, 1, 1).value().data, slice(e, 0, 2, 1).value().data);
}

TEST(Backward, SumOfSquares) {
  ParamStore p;
  p.insert("x", Tensor({2}, {1, 2}));
  Graph<float> g(p);
  auto x = g.param("x");
  g.backward(sum(mul(x, x)));
  const auto grads = g.param_grads();
  EXPECT_EQ(grads.at("x").data, std::vector<float>({2, 4}));
}

TEST(Backward, UntouchedParameterHasZeroGradient) {
  ParamStore p;
  p.insert("used", Tensor({2}, {1, 2}));
  p.insert("unused", Tensor({3}, {1, 2, 3}));
  Graph<float> g(p);
  g.backward(sum(g.param("used")));
  EXPECT_EQ(g.param_grads().at("unused").data, std::vector<float>(3, 0.0f));
}

TEST(Backward, FrozenParameterGetsNoGradient) {
  ParamStore p;
  p.insert("a", Tensor({2}, {1, 2}));
  p.insert("b", Tensor({2}, {3, 4}));
  Graph<float> g(p, {"b"});
  g.backward(sum(mul(g.param("a"), g.param("b"))));
  const auto grads = g.param_grads();
  EXPECT_EQ(grads.at("a").data, std::vector<float>({3, 4}));
  EXPECT_EQ(grads.at("b").data, std::vector<float>({0, 0}));
}

TEST(Backward, NonScalarLossIsUsageError) {
  ParamStore p;
  p.insert("x", Tensor({2}, {1, 2}));
  Graph<float> g(p);
  EXPECT_THROW(g.backward(g.param("x")), UsageError);
}

TEST(Backward, BitIdenticalAcrossRuns) {
  const ParamStore p = mlp_params(5);
  auto run = [&] {
    Graph<float> g(p);
    g.backward(MlpLoss{}(g));
    return g.param_grads();
  };
  EXPECT_EQ(run(), run());
}

TEST(Gradcheck, MlpFloat) {
  const auto r = gradcheck<float>(MlpLoss{}, mlp_params(1), {.h = 1e-3, .coordinates = 64, .seed = 1});
  EXPECT_GE(r.coordinates, 50);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(Gradcheck, MlpDoubleShadow) {
  const auto r = gradcheck<double>(MlpLoss{}, mlp_params(1), {.h = 1e-3, .coordinates = 64, .seed = 1});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(Gradcheck, AttentionFloat) {
  const auto r = gradcheck<float>(AttentionNorm{}, attn_params(2), {.h = 1e-3, .coordinates = 64, .seed = 2});
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(Gradcheck, AttentionDoubleShadow) {
  const auto r = gradcheck<double>(AttentionNorm{}, attn_params(2), {.h = 1e-3, .coordinates = 64, .seed = 2});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(Gradcheck, ConstantFunctionUsesFloor) {
  ParamStore p;
  p.insert("x", Tensor({3}, {1, 2, 3}));
  auto constant_f = [](auto& g) { return scale(sum(g.param("x")), 0.0, 4.0); };
  const auto r = gradcheck<float>(constant_f, p);
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(Gradcheck, NonDeterministicFunctionIsDetected) {
  ParamStore p;
  p.insert("x", Tensor({2}, {1, 2}));
  int calls = 0;
  auto f = [&calls](auto& g) { return scale(sum(g.param("x")), 1.0, static_cast<double>(++calls)); };
  EXPECT_THROW(gradcheck<float>(f, p), OracleError);
}

TEST(Rng, PureFunctionOfSeedStreamCounter) {
  RngStream a(7, 3), b(7, 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  RngStream c(7, 4);
  RngStream d(7, 3);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += c.next_u64() == d.next_u64();
  EXPECT_EQ(same, 0);
}

TEST(Rng, ForksAreIndependent) {
  RngStream base(1, Stream::kData);
  RngStream f1 = base.fork(0), f2 = base.fork(1);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += f1.next_u64() == f2.next_u64();
  EXPECT_EQ(same, 0);
}

TEST(Rng, NormalMoments) {
  RngStream rng(9, Stream::kTest);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.04);
}

TEST(ParamStoreTest, LexicographicIterationAndUniqueNames) {
  ParamStore p;
  p.insert("b", Tensor::zeros({1}));
  p.insert("a", Tensor::zeros({1}));
  p.insert("a.z", Tensor::zeros({1}));
  EXPECT_EQ(p.names(), std::vector<std::string>({"a", "a.z", "b"}));
  EXPECT_THROW(p.insert("a", Tensor::zeros({1})), ConfigError);
}

TEST(Checkpoint, BitExactRoundTrip) {
  ParamStore p = mlp_params(3);
  p.insert("scalar", Tensor::scalar(-0.0f));
  p.insert("special", Tensor({3}, {1e-40f, -3.4e38f, 0.1f}));
  const auto bytes = encode_checkpoint(p);
  const ParamStore q = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(q), bytes);
  for (const auto& [name, t] : p) {
    ASSERT_TRUE(q.contains(name));
    EXPECT_EQ(std::memcmp(t.data.data(), q.at(name).data.data(), t.data.size() * 4), 0);
  }
}

TEST(Checkpoint, LayoutMatchesFormat) {
  ParamStore p;
  p.insert("ab", Tensor({2, 1}, {1.0f, 2.0f}));
  const auto bytes = encode_checkpoint(p);
  // 4 magic + 4 version + 4 count + 2 name-len + 2 name + 1 rank + 2*4 extents + 2*4 payload
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 2 + 2 + 1 + 8 + 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "AVCK");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 1);
}

TEST(Checkpoint, ErrorsCarryOffsets) {
  auto bytes = encode_checkpoint(mlp_params(3));
  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  auto cut = bytes;
  cut.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(cut), FormatError);
  auto ver = bytes;
  ver[4] = 2;
  try {
    decode_checkpoint(ver);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
}

namespace {

ParamStore mixed_params(std::uint64_t seed) {
  RngStream rng(seed, Stream::kTest);
  ParamStore p;
  p.insert("table", random_tensor({5, 6}, rng, 0.5));
  p.insert("bias", random_tensor({6}, rng, 0.5));
  p.insert("gain", random_tensor({1, 6}, rng, 0.5));
  p.insert("w", random_tensor({6, 6}, rng, 0.4));
  return p;
}

// Touches every primitive with a backward pass.
struct EveryPrimitive {
  template <class T>
  Var<T> operator()(Graph<T>& g) const {
    auto tok = embedding(g.param("table"), {1, 4, 2, 0, 3, 3, 1, 2}, Shape{2, 4});  // [2,4,6]
    auto x = add(tok, g.param("bias"));
    x = mul(x, broadcast_to(g.param("gain"), Shape{4, 6}));
    x = add(x, sinusoidal_embedding(g, {0, 1, 2, 3}, 6));
    auto h = gelu(matmul(layer_norm(x), g.param("w")));
    auto a = attention(h, x, x, 2);
    auto pooled = adaptive_mean_pool(a, 1, 3);                       // [2,3,6]
    auto cat = concat<T>({pooled, slice(h, 1, 1, 2)}, 1);            // [2,5,6]
    auto m = mean_pool(softmax(scale(cat, 2.0, 0.1)), 2);            // [2,5]
    auto r = reshape(m, Shape{10});
    return add(mse(r, g.constant(BasicTensor<T>::full({10}, T(0.3)))), scale(sum(mean_pool(cat, 1)), 0.01));
  }
};

}  // namespace

TEST(Gradcheck, EveryPrimitiveFloat) {
  const auto r = gradcheck<float>(EveryPrimitive{}, mixed_params(8), {.h = 1e-3, .coordinates = 64, .seed = 3});
  EXPECT_GE(r.coordinates, 50);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst_param << "[" << r.worst_index << "] a=" << r.worst_analytic
                                   << " n=" << r.worst_numeric;
}

TEST(Gradcheck, EveryPrimitiveDoubleShadow) {
  const auto r = gradcheck<double>(EveryPrimitive{}, mixed_params(8), {.h = 1e-3, .coordinates = 64, .seed = 3});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param << "[" << r.worst_index << "]";
}
