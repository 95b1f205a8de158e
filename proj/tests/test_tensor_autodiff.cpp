#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fd_oracle.hpp"
#include "slingshot/autodiff.hpp"
#include "slingshot/errors.hpp"
#include "slingshot/params.hpp"

using namespace slingshot;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Builds a scalar loss from named inputs; used to check one primitive against
// finite differences over all of its inputs at once.
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

void expect_fd_match(const std::vector<Tensor>& inputs, const Builder& build, std::uint64_t seed) {
  std::vector<double> x;
  std::vector<Shape> shapes;
  for (const auto& t : inputs) {
    x.insert(x.end(), t.storage().begin(), t.storage().end());
    shapes.push_back(t.shape());
  }
  auto unpack = [&](std::span<const double> flat) {
    std::vector<Tensor> out;
    std::size_t off = 0;
    for (const auto& s : shapes) {
      const std::size_t n = shape_numel(s);
      out.emplace_back(s, std::vector<double>(flat.begin() + off, flat.begin() + off + n));
      off += n;
    }
    return out;
  };
  auto value = [&](std::span<const double> flat) {
    Tape tape;
    std::vector<Var> vars;
    for (auto& t : unpack(flat)) vars.push_back(tape.constant(t));
    return build(tape, vars).value().item();
  };
  Tape tape;
  std::vector<Var> vars;
  auto ts = unpack(x);
  for (std::size_t i = 0; i < ts.size(); ++i) vars.push_back(tape.parameter("in" + std::to_string(i), ts[i]));
  auto grads = tape.backward(build(tape, vars));
  std::vector<double> g;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto& gi = grads.at("in" + std::to_string(i));
    g.insert(g.end(), gi.storage().begin(), gi.storage().end());
  }
  const auto report = fd::check(value, x, g, 64, seed);
  EXPECT_LE(report.worst(), 1e-5) << "directional " << report.directional_error << " coordinate "
                                  << report.worst_coordinate_error;
}

// Weighted sum so every output element gets a distinct upstream gradient.
Var weighted_sum(Tape& tape, Var v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(v, tape.constant(random_tensor(v.shape(), rng, -1.0, 1.0))));
}

}  // namespace

TEST(Tensor, RejectsZeroDimensionsAndEmptyShape) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor(Shape{}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(Tensor, NumelMatchesShapeProduct) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.storage().size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(t.item(), ContractError);
}

TEST(Ops, SoftmaxOfEqualLogitsIsUniform) {
  Tape tape;
  auto s = softmax_lastdim(tape.constant(Tensor({4}, 0.0)));
  for (double v : s.value().storage()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Ops, ReluClampsNegatives) {
  Tape tape;
  auto r = relu(tape.constant(Tensor({2}, std::vector<double>{-1.0, 2.0})));
  EXPECT_EQ(r.value().storage(), (std::vector<double>{0.0, 2.0}));
}

TEST(Ops, MatmulOfOnesCountsInnerDimension) {
  Tape tape;
  auto m = matmul(tape.constant(Tensor({2, 3}, 1.0)), tape.constant(Tensor({3, 2}, 1.0)));
  EXPECT_EQ(m.shape(), (Shape{2, 2}));
  for (double v : m.value().storage()) EXPECT_EQ(v, 3.0);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  Tape tape;
  try {
    matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2}))), ShapeError);
}

TEST(Ops, NonFiniteInputPropagates) {
  Tape tape;
  auto r = relu(tape.constant(Tensor({2}, std::vector<double>{std::nan(""), 1.0})));
  EXPECT_TRUE(std::isnan(r.value()[0]));
}

TEST(Ops, SoftmaxRowsSumToOneAndStayInOpenInterval) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    auto s = softmax_lastdim(tape.constant(random_tensor({3, 7}, rng, -30.0, 30.0)));
    const auto& v = s.value().storage();
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GT(v[r * 7 + c], 0.0);
        EXPECT_LT(v[r * 7 + c], 1.0);
        total += v[r * 7 + c];
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Ops, SoftmaxSurvivesHugeLogits) {
  Tape tape;
  auto s = softmax_lastdim(tape.constant(Tensor({3}, std::vector<double>{1000.0, 1000.0, -1000.0})));
  EXPECT_DOUBLE_EQ(s.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(s.value()[2], 0.0);
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  Tape tape;
  const std::vector<std::uint32_t> t{5};
  auto l = cross_entropy(tape.constant(Tensor({1, 99}, 0.0)), t);
  EXPECT_NEAR(l.value().item(), std::log(99.0), 1e-12);
  EXPECT_NEAR(l.value().item(), 4.59512, 1e-5);
}

TEST(CrossEntropy, BinaryUniformIsLogTwo) {
  Tape tape;
  const std::vector<std::uint32_t> t{0};
  auto l = cross_entropy(tape.constant(Tensor({1, 2}, 0.0)), t);
  EXPECT_NEAR(l.value().item(), 0.693147, 1e-6);
  EXPECT_NEAR(l.value().item(), std::log(2.0), 1e-15);
}

TEST(CrossEntropy, ConfidentCorrectPredictionIsNearZero) {
  Tape tape;
  Tensor logits({1, 4}, 0.0);
  logits[2] = 100.0;
  const std::vector<std::uint32_t> t{2};
  EXPECT_LT(cross_entropy(tape.constant(logits), t).value().item(), 1e-40);
}

TEST(CrossEntropy, OutOfRangeTargetIsIndexError) {
  Tape tape;
  const std::vector<std::uint32_t> t{4};
  EXPECT_THROW(cross_entropy(tape.constant(Tensor({1, 4}, 0.0)), t), IndexError);
}

TEST(CrossEntropy, GradientAtUniformLogitsIsSoftmaxMinusOneHot) {
  const std::size_t vocab = 7;
  Tape tape;
  auto logits = tape.parameter("logits", Tensor({1, vocab}, 0.0));
  const std::vector<std::uint32_t> t{3};
  auto g = tape.backward(cross_entropy(logits, t)).at("logits");
  for (std::size_t k = 0; k < vocab; ++k) {
    EXPECT_NEAR(g[k], 1.0 / vocab - (k == 3 ? 1.0 : 0.0), 1e-15);
  }
}

TEST(Backward, SquareHasGradientSix) {
  Tape tape;
  auto x = tape.parameter("x", Tensor::scalar(3.0));
  auto g = tape.backward(mul(x, x));
  EXPECT_EQ(g.at("x").item(), 6.0);
}

TEST(Backward, NonScalarLossIsContractViolation) {
  Tape tape;
  auto x = tape.parameter("x", Tensor({2}, 1.0));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, UnreachedParameterGetsZeros) {
  Tape tape;
  auto x = tape.parameter("x", Tensor({2}, 1.0));
  auto y = tape.parameter("y", Tensor({3}, 1.0));
  auto g = tape.backward(sum(x));
  EXPECT_EQ(g.at("y").storage(), std::vector<double>(3, 0.0));
  EXPECT_EQ(g.at("x").storage(), std::vector<double>(2, 1.0));
  (void)y;
}

TEST(Backward, ClearsTheTape) {
  Tape tape;
  auto x = tape.parameter("x", Tensor::scalar(2.0));
  tape.backward(mul(x, x));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, FanOutEqualsSumOfPerUseGradients) {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor w = random_tensor({4, 4}, rng);
  // f(a) = sum(relu(a W) * a): a is used twice.
  Tape shared;
  auto av = shared.parameter("a", a);
  auto wv = shared.constant(w);
  auto g_shared = shared.backward(sum(mul(relu(matmul(av, wv)), av))).at("a");

  // Same function with two independent copies of a.
  Tape split;
  auto a1 = split.parameter("a1", a);
  auto a2 = split.parameter("a2", a);
  auto g = split.backward(sum(mul(relu(matmul(a1, split.constant(w))), a2)));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_DOUBLE_EQ(g_shared[i], g.at("a1")[i] + g.at("a2")[i]);
  }
}

TEST(Backward, RepeatedRunsAreBitwiseIdentical) {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({4, 6}, rng);
  const Tensor w = random_tensor({6, 5}, rng);
  auto once = [&] {
    Tape tape;
    auto xv = tape.parameter("x", x);
    auto wv = tape.parameter("w", w);
    const std::vector<std::uint32_t> t{0, 1, 2, 3};
    return tape.backward(cross_entropy(layer_norm(matmul(xv, wv), tape.constant(Tensor({5}, 1.0)),
                                                  tape.constant(Tensor({5}, 0.0))),
                                       t));
  };
  const auto a = once();
  const auto b = once();
  EXPECT_EQ(a.at("x").storage(), b.at("x").storage());
  EXPECT_EQ(a.at("w").storage(), b.at("w").storage());
}

TEST(Backward, DuplicateParameterNameRejected) {
  Tape tape;
  tape.parameter("x", Tensor::scalar(1.0));
  EXPECT_THROW(tape.parameter("x", Tensor::scalar(2.0)), ContractError);
}

class PrimitiveGradient : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
  const int seed = GetParam();
  std::mt19937_64 rng(seed);
  const std::vector<std::uint32_t> ids{2, 0, 3, 3, 1, 2};
  const std::vector<std::uint32_t> targets{1, 4, 0};

  expect_fd_match({random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, matmul(v[0], v[1]), seed); }, seed);
  expect_fd_match({random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, matmul(v[0], v[1]), seed); }, seed);
  expect_fd_match({random_tensor({2, 3, 4}, rng), random_tensor({4, 2}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, matmul(v[0], v[1]), seed); }, seed);
  expect_fd_match({random_tensor({3, 4}, rng), random_tensor({4}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, add(v[0], v[1]), seed); }, seed);
  expect_fd_match({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, sub(v[0], v[1]), seed); }, seed);
  expect_fd_match({random_tensor({4}, rng), random_tensor({3, 4}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, mul(v[0], v[1]), seed); }, seed);
  expect_fd_match({random_tensor({3, 4}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, scalar_mul(v[0], -1.7), seed); }, seed);
  expect_fd_match({random_tensor({3, 4}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, relu(v[0]), seed); }, seed);
  expect_fd_match({random_tensor({2, 3, 5}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, softmax_lastdim(v[0]), seed); }, seed);
  expect_fd_match({random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, layer_norm(v[0], v[1], v[2]), seed); },
                  seed);
  expect_fd_match({random_tensor({4, 3}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) {
                    return weighted_sum(t, embedding_lookup<double>(v[0], ids, {2, 3}), seed);
                  },
                  seed);
  expect_fd_match({random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, concat<double>({v[0], v[1]}, 1), seed); },
                  seed);
  expect_fd_match({random_tensor({2, 5, 3}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, slice(v[0], 1, 1, 3), seed); }, seed);
  expect_fd_match({random_tensor({2, 3, 4}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, transpose(v[0]), seed); }, seed);
  expect_fd_match({random_tensor({2, 6}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, reshape(v[0], {3, 4}), seed); }, seed);
  expect_fd_match({random_tensor({3, 4}, rng)},
                  [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, normalize_rows(v[0]), seed); }, seed);
  expect_fd_match({random_tensor({3, 5}, rng)},
                  [&](Tape&, const std::vector<Var>& v) { return cross_entropy(v[0], targets); }, seed);
  expect_fd_match({random_tensor({3, 5}, rng)}, [&](Tape&, const std::vector<Var>& v) { return mean(v[0]); }, seed);
}

INSTANTIATE_TEST_SUITE_P(RandomInputs, PrimitiveGradient, ::testing::Range(1, 9));

TEST(Ops, EmbeddingRejectsOutOfRangeIds) {
  Tape tape;
  const std::vector<std::uint32_t> ids{0, 4};
  EXPECT_THROW(embedding_lookup<double>(tape.constant(Tensor({4, 2})), ids, {2}), IndexError);
}

TEST(Ops, NormalizeRowsRejectsZeroRow) {
  Tape tape;
  Tensor t({2, 3}, 1.0);
  for (std::size_t c = 0; c < 3; ++c) t[3 + c] = 0.0;
  EXPECT_THROW(normalize_rows(tape.constant(t)), SingularInputError);
}

TEST(Ops, LayerNormUsesVarianceEpsilon) {
  Tape tape;
  // Row [1, -1]: mean 0, variance 1, so the output is x / sqrt(1 + 1e-5).
  auto y = layer_norm(tape.constant(Tensor({1, 2}, std::vector<double>{1.0, -1.0})), tape.constant(Tensor({2}, 1.0)),
                      tape.constant(Tensor({2}, 0.0)));
  EXPECT_NEAR(y.value()[0], 1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
}

namespace {

BasicParamSet<double> sample_params() {
  std::mt19937_64 rng(4);
  BasicParamSet<double> p;
  p.add("a.weight", random_tensor({3, 2}, rng), ParamGroup::representation);
  p.add("a.bias", random_tensor({2}, rng), ParamGroup::representation);
  p.add("head.weight", random_tensor({2, 5}, rng), ParamGroup::classifier);
  return p;
}

}  // namespace

TEST(Flatten, RoundTripIsExact) {
  const auto p = sample_params();
  auto [flat, view] = flatten_params(p);
  EXPECT_EQ(unflatten<double>(flat, view), p);
}

TEST(Flatten, RepeatedFlattensAgree) {
  const auto p = sample_params();
  EXPECT_EQ(flatten_params(p).first, flatten_params(p).first);
  EXPECT_EQ(flatten_params(p).second, flatten_params(p).second);
}

TEST(Flatten, ViewCoversContiguousRange) {
  const auto p = sample_params();
  const auto view = make_flat_view(p);
  EXPECT_EQ(view.total_len, p.total_elements());
  std::size_t offset = 0;
  for (const auto& s : view.segments) {
    EXPECT_EQ(s.offset, offset);
    offset += s.length;
  }
  EXPECT_EQ(offset, view.total_len);
  EXPECT_EQ(view.segments.front().name, "a.weight");
  EXPECT_EQ(view.segment_at(8).name, "head.weight");
}

TEST(Flatten, LengthMismatchRejected) {
  const auto view = make_flat_view(sample_params());
  std::vector<double> short_flat(view.total_len - 1);
  EXPECT_THROW(unflatten<double>(short_flat, view), ShapeError);
}

TEST(Flatten, FloatRoundTripIsExact) {
  const auto p = sample_params().cast<float>();
  auto [flat, view] = flatten_params(p);
  EXPECT_EQ(unflatten<float>(flat, view), p);
}
