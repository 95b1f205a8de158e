#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "fd_oracle.hpp"
#include "slingshot/errors.hpp"
#include "slingshot/models.hpp"

using namespace slingshot;

namespace {

ModelSpec mlp_spec(std::size_t depth = 4, std::size_t width = 256) {
  ModelSpec s;
  s.kind = ModelKind::mlp;
  s.depth = depth;
  s.width = width;
  s.input_dim = 128;
  s.num_classes = 8;
  return s;
}

ModelSpec transformer_spec(std::size_t depth = 2, std::size_t width = 128, std::size_t heads = 4) {
  ModelSpec s;
  s.kind = ModelKind::transformer;
  s.depth = depth;
  s.width = width;
  s.heads = heads;
  s.vocab = 99;
  s.seq_len = 5;
  return s;
}

Batch feature_batch(const ModelSpec& spec, std::size_t rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::uniform_int_distribution<std::uint32_t> label(0, static_cast<std::uint32_t>(spec.num_classes - 1));
  Batch b;
  b.rows = rows;
  b.features.resize(rows * spec.input_dim);
  for (auto& v : b.features) v = n(rng);
  for (std::size_t i = 0; i < rows; ++i) b.targets.push_back(label(rng));
  return b;
}

Batch token_batch(const ModelSpec& spec, std::size_t rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> tok(0, static_cast<std::uint32_t>(spec.vocab - 1));
  Batch b;
  b.rows = rows;
  for (std::size_t i = 0; i < rows * spec.seq_len; ++i) b.tokens.push_back(tok(rng));
  for (std::size_t i = 0; i < rows; ++i) b.targets.push_back(tok(rng));
  return b;
}

// Naive row-major product, independent of the tape and of Eigen.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t n,
                                 std::size_t k, std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * m + j];
      c[i * m + j] = s;
    }
  return c;
}

void expect_model_gradient_matches_fd(const ModelSpec& spec, const Batch& batch, std::uint64_t seed) {
  const ParamSet params = build<double>(spec, seed);
  auto [flat, view] = flatten_params(params);
  const auto lg = loss_and_gradient(spec, params, view, batch);
  auto value = [&, &view = view](std::span<const double> x) {
    return loss_and_gradient(spec, unflatten<double>(x, view), view, batch).loss;
  };
  const auto report = fd::check(value, flat, lg.gradient, 24, seed);
  EXPECT_LE(report.worst(), 1e-5) << model_kind_name(spec.kind) << " directional " << report.directional_error
                                  << " coordinate " << report.worst_coordinate_error;
}

}  // namespace

TEST(ModelSpec, RejectsWidthNotDivisibleByHeads) {
  EXPECT_THROW(transformer_spec(2, 130, 4).validate(), ConfigError);
  EXPECT_NO_THROW(transformer_spec(2, 128, 4).validate());
}

TEST(ModelSpec, RejectsNonPositiveTau) {
  auto s = mlp_spec();
  s.head_mode = HeadMode::normalized;
  s.tau = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  for (double tau : {0.1, 0.25, 0.5, 0.75, 1.0}) {
    s.tau = tau;
    EXPECT_NO_THROW(s.validate());
  }
}

TEST(Build, TransformerParameterCountNearPaperSize) {
  const auto spec = transformer_spec();
  const std::size_t n = parameter_count(spec);
  EXPECT_GE(n, 350'000u);
  EXPECT_LE(n, 550'000u);
  EXPECT_EQ(build<double>(spec, 1).total_elements(), n);
}

TEST(Build, SameSeedIsBitwiseIdentical) {
  for (const auto& spec : {mlp_spec(), transformer_spec()}) {
    EXPECT_TRUE(build<double>(spec, 42) == build<double>(spec, 42));
    EXPECT_FALSE(build<double>(spec, 42) == build<double>(spec, 43));
  }
}

TEST(Build, InitializationFollowsScheme) {
  const auto params = build<double>(transformer_spec(), 7);
  const double bound = 1.0 / std::sqrt(128.0);
  for (double v : params.at("block1.attn.q.weight").storage()) EXPECT_LE(std::abs(v), bound);
  for (double v : params.at("block1.attn.q.bias").storage()) EXPECT_EQ(v, 0.0);
  for (double v : params.at("block1.ln1.gain").storage()) EXPECT_EQ(v, 1.0);
  const auto& emb = params.at("embed.token").storage();
  double ss = 0.0;
  for (double v : emb) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(emb.size())), 0.02, 0.002);
}

TEST(ParamGroups, MlpClassifierIsLastLayer) {
  const auto [repr, clf] = param_groups(build<double>(mlp_spec(), 1));
  EXPECT_EQ(clf, (std::vector<std::string>{"layer4.weight", "layer4.bias"}));
  EXPECT_EQ(repr.size(), 6u);
}

TEST(ParamGroups, TransformerClassifierIsVocabProjection) {
  const auto [repr, clf] = param_groups(build<double>(transformer_spec(), 1));
  EXPECT_EQ(clf, (std::vector<std::string>{"head.weight", "head.bias"}));
  auto n = transformer_spec();
  n.head_mode = HeadMode::normalized;
  const auto [repr2, clf2] = param_groups(build<double>(n, 1));
  EXPECT_EQ(clf2, (std::vector<std::string>{"head.weight"}));
}

TEST(ParamGroups, GroupsPartitionAllNames) {
  for (const auto& spec : {mlp_spec(), transformer_spec()}) {
    const auto params = build<double>(spec, 3);
    const auto [repr, clf] = param_groups(params);
    std::set<std::string> r(repr.begin(), repr.end()), c(clf.begin(), clf.end()), all;
    std::vector<std::string> inter;
    std::set_intersection(r.begin(), r.end(), c.begin(), c.end(), std::back_inserter(inter));
    EXPECT_TRUE(inter.empty());
    std::set_union(r.begin(), r.end(), c.begin(), c.end(), std::inserter(all, all.begin()));
    const auto names = params.names();
    EXPECT_EQ(all, std::set<std::string>(names.begin(), names.end()));
  }
}

TEST(Forward, CausalMaskHidesLaterTokensExactly) {
  const auto spec = transformer_spec(2, 32, 4);
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto params = build<double>(spec, seed);
    const Batch base = token_batch(spec, 3, seed);
    const auto t0 = trace(spec, params, base, {.all_positions = true});
    for (std::size_t j = 1; j < spec.seq_len; ++j) {
      Batch changed = base;
      for (std::size_t r = 0; r < base.rows; ++r) {
        auto& tok = changed.tokens[r * spec.seq_len + j];
        tok = (tok + 17) % static_cast<std::uint32_t>(spec.vocab);
      }
      const auto t1 = trace(spec, params, changed, {.all_positions = true});
      const std::size_t v = spec.vocab;
      for (std::size_t r = 0; r < base.rows; ++r)
        for (std::size_t i = 0; i < j; ++i)
          for (std::size_t k = 0; k < v; ++k) {
            const std::size_t at = (r * spec.seq_len + i) * v + k;
            ASSERT_EQ(t0.position_logits.storage()[at], t1.position_logits.storage()[at])
                << "row " << r << " position " << i << " changed after perturbing " << j;
          }
    }
  }
}

TEST(Forward, AnswerLogitsMatchPositionLogitsAtAnswerPosition) {
  const auto spec = transformer_spec(1, 16, 2);
  const auto params = build<double>(spec, 5);
  const auto t = trace(spec, params, token_batch(spec, 2, 5), {.all_positions = true});
  const std::size_t v = spec.vocab, p = spec.answer_position();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t k = 0; k < v; ++k)
      EXPECT_NEAR(t.logits.storage()[r * v + k], t.position_logits.storage()[(r * spec.seq_len + p) * v + k], 1e-12);
}

TEST(Forward, TraceHasOneFeaturePerLayerOrBlock) {
  EXPECT_EQ(trace(mlp_spec(4, 16), build<double>(mlp_spec(4, 16), 1), feature_batch(mlp_spec(4, 16), 2, 1))
                .features.size(),
            4u);
  const auto ts = transformer_spec(2, 16, 2);
  EXPECT_EQ(trace(ts, build<double>(ts, 1), token_batch(ts, 2, 1)).features.size(), 2u);
}

TEST(Forward, RejectsOutOfRangeTokenAndWrongArity) {
  const auto spec = transformer_spec(1, 16, 2);
  const auto params = build<double>(spec, 1);
  Batch b = token_batch(spec, 2, 1);
  b.tokens[3] = 99;
  EXPECT_THROW(trace(spec, params, b), IndexError);
  b = token_batch(spec, 2, 1);
  b.tokens.pop_back();
  EXPECT_THROW(trace(spec, params, b), ShapeError);
  const auto m = mlp_spec(2, 8);
  Batch f = feature_batch(m, 2, 1);
  f.features.pop_back();
  EXPECT_THROW(trace(m, build<double>(m, 1), f), ShapeError);
}

TEST(Forward, AllZeroMlpGivesUniformSoftmax) {
  const auto spec = mlp_spec(4, 32);
  auto params = build<double>(spec, 1);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (auto& v : params.value(i).data()) v = 0.0;
  const auto t = trace(spec, params, feature_batch(spec, 5, 2));
  for (double v : t.logits.storage()) EXPECT_EQ(v, 0.0);
  auto [flat, view] = flatten_params(params);
  EXPECT_NEAR(loss_and_gradient(spec, params, view, feature_batch(spec, 5, 2)).loss, std::log(8.0), 1e-15);
}

class DeepLinearCollapse : public ::testing::TestWithParam<std::size_t> {};

TEST_P(DeepLinearCollapse, EqualsProductOfWeightMatrices) {
  ModelSpec spec;
  spec.kind = ModelKind::deep_linear;
  spec.depth = GetParam();
  spec.width = 12;
  spec.input_dim = 10;
  spec.num_classes = 6;
  const auto params = build<double>(spec, 100 + GetParam());
  const Batch batch = feature_batch(spec, 7, GetParam());

  // Collapse W = W1 W2 ... Wn and the composed bias, then apply once.
  std::vector<double> w = params.at("layer1.weight").storage();
  std::vector<double> b = params.at("layer1.bias").storage();
  std::size_t rows = spec.input_dim;
  for (std::size_t k = 2; k <= spec.depth; ++k) {
    const auto& wk = params.at("layer" + std::to_string(k) + ".weight");
    const std::size_t in = wk.shape()[0], out = wk.shape()[1];
    w = naive_matmul(w, wk.storage(), rows, in, out);
    b = naive_matmul(b, wk.storage(), 1, in, out);
    const auto& bk = params.at("layer" + std::to_string(k) + ".bias").storage();
    for (std::size_t j = 0; j < out; ++j) b[j] += bk[j];
  }
  auto expected = naive_matmul(batch.features, w, batch.rows, spec.input_dim, spec.num_classes);
  for (std::size_t i = 0; i < batch.rows; ++i)
    for (std::size_t j = 0; j < spec.num_classes; ++j) expected[i * spec.num_classes + j] += b[j];

  const auto got = trace(spec, params, batch).logits.storage();
  ASSERT_EQ(got.size(), expected.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected[i], 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Depths, DeepLinearCollapse, ::testing::Values(1, 2, 3, 4, 5, 6, 7, 8));

TEST(NormalizedHead, IdenticalDirectionGivesExactlyOne) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor w({5, 16});
    for (auto& v : w.data()) v = n(rng);
    const std::size_t k = static_cast<std::size_t>(trial % 5);
    Tensor f({1, 16}, std::vector<double>(w.storage().begin() + 16 * k, w.storage().begin() + 16 * (k + 1)));
    Tape tape;
    const auto out = normalized_head(tape.constant(f), tape.constant(w), 1.0).value();
    EXPECT_EQ(out.storage()[k], 1.0);
    for (double v : out.storage()) {
      EXPECT_LE(v, 1.0);
      EXPECT_GE(v, -1.0);
    }
  }
}

TEST(NormalizedHead, LogitsBoundedByInverseTau) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n;
  for (double tau : {0.1, 0.25, 0.5, 0.75, 1.0}) {
    Tensor f({20, 8}), w({6, 8});
    for (auto& v : f.data()) v = 100.0 * n(rng);
    for (auto& v : w.data()) v = 1e-3 * n(rng);
    Tape tape;
    for (double v : normalized_head(tape.constant(f), tape.constant(w), tau).value().storage()) {
      EXPECT_LE(std::abs(v), 1.0 / tau);
    }
  }
}

TEST(NormalizedHead, HalvingTauDoublesLogits) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  Tensor f({4, 8}), w({6, 8});
  for (auto& v : f.data()) v = n(rng);
  for (auto& v : w.data()) v = n(rng);
  Tape tape;
  const auto a = normalized_head(tape.constant(f), tape.constant(w), 0.5).value();
  const auto b = normalized_head(tape.constant(f), tape.constant(w), 0.25).value();
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_DOUBLE_EQ(b.storage()[i], 2.0 * a.storage()[i]);
  for (std::size_t r = 0; r < 4; ++r) {
    auto row = [&](const Tensor& t) { return t.storage().begin() + 6 * r; };
    EXPECT_EQ(std::max_element(row(a), row(a) + 6) - row(a), std::max_element(row(b), row(b) + 6) - row(b));
  }
}

TEST(NormalizedHead, ZeroRowIsSingular) {
  Tensor f({2, 3}, {1, 2, 3, 0, 0, 0});
  Tensor w({2, 3}, {1, 0, 0, 0, 1, 0});
  Tape tape;
  EXPECT_THROW(normalized_head(tape.constant(f), tape.constant(w), 1.0), SingularInputError);
  Tensor f2({1, 3}, {1, 2, 3});
  Tensor w2({2, 3}, {1, 0, 0, 0, 0, 0});
  EXPECT_THROW(normalized_head(tape.constant(f2), tape.constant(w2), 1.0), SingularInputError);
}

TEST(NormalizedHead, GradientMatchesFiniteDifferences) {
  auto spec = mlp_spec(3, 16);
  spec.head_mode = HeadMode::normalized;
  spec.tau = 0.25;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) expect_model_gradient_matches_fd(spec, feature_batch(spec, 6, seed), seed);
}

TEST(ModelGradient, MlpMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto spec = mlp_spec(4, 32);
    expect_model_gradient_matches_fd(spec, feature_batch(spec, 6, seed), seed);
  }
}

TEST(ModelGradient, DeepLinearMatchesFiniteDifferences) {
  ModelSpec spec;
  spec.kind = ModelKind::deep_linear;
  spec.depth = 6;
  spec.width = 16;
  spec.input_dim = 12;
  spec.num_classes = 5;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) expect_model_gradient_matches_fd(spec, feature_batch(spec, 6, seed), seed);
}

TEST(ModelGradient, TransformerMatchesFiniteDifferences) {
  auto spec = transformer_spec(2, 16, 4);
  spec.vocab = 11;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) expect_model_gradient_matches_fd(spec, token_batch(spec, 4, seed), seed);
  spec.head_mode = HeadMode::normalized;
  spec.tau = 0.5;
  expect_model_gradient_matches_fd(spec, token_batch(spec, 4, 9), 9);
}

TEST(ModelGradient, FloatAndDoubleAgreeToSinglePrecision) {
  const auto spec = mlp_spec(3, 16);
  const auto params = build<double>(spec, 2);
  const Batch b = feature_batch(spec, 4, 2);
  BasicBatch<float> bf{b.rows, std::vector<float>(b.features.begin(), b.features.end()), {}, b.targets};
  const auto pf = params.cast<float>();
  auto [fd64, view] = flatten_params(params);
  const auto l64 = loss_and_gradient(spec, params, view, b);
  const auto l32 = loss_and_gradient(spec, pf, view, bf);
  EXPECT_NEAR(l32.loss, l64.loss, 1e-5);
  for (std::size_t i = 0; i < l64.gradient.size(); ++i) EXPECT_NEAR(l32.gradient[i], l64.gradient[i], 1e-5);
}
