#include <gtest/gtest.h>

#include <random>

#include "ctrleval/ctrleval.hpp"
#include "test_support.hpp"

using namespace ctrleval;

using testing_support::code_of;

TEST(Ensemble, SingleEvaluator) {
  const std::vector<WeightedScore> parts{{"a", -3.2, 1.0}};
  EXPECT_DOUBLE_EQ(ensemble(parts), -3.2);
}

TEST(Ensemble, SymmetricPair) {
  const std::vector<WeightedScore> parts{{"a", 2.0, 0.5}, {"b", 4.0, 0.5}};
  EXPECT_DOUBLE_EQ(ensemble(parts), 3.0);
}

TEST(Ensemble, ThreeTermDotProduct) {
  const std::vector<WeightedScore> parts{{"a", 1.0, 0.2}, {"b", 2.0, 0.3}, {"c", 3.0, 0.5}};
  // 0.2*1 + 0.3*2 + 0.5*3
  EXPECT_NEAR(ensemble(parts), 0.2 + 0.6 + 1.5, 1e-15);
  EXPECT_NEAR(ensemble(parts), 2.3, 1e-12);
}

TEST(Ensemble, Errors) {
  EXPECT_EQ(code_of([] { (void)ensemble(std::vector<WeightedScore>{}); }), ErrorCode::no_evaluators);
  EXPECT_EQ(code_of([] {
              (void)ensemble(std::vector<WeightedScore>{{"a", 1.0, 0.5}, {"b", 1.0, 0.4}});
            }),
            ErrorCode::unnormalized_weights);
  EXPECT_EQ(code_of([] {
              (void)ensemble(std::vector<WeightedScore>{{"a", 1.0, 1.5}, {"b", 1.0, -0.5}});
            }),
            ErrorCode::unnormalized_weights);
}

TEST(Ensemble, ToleratesRoundingWithinTolerance) {
  const std::vector<WeightedScore> parts{{"a", 1.0, 0.5 + 5e-10}, {"b", 1.0, 0.5}};
  EXPECT_NO_THROW((void)ensemble(parts));
}

TEST(NormalizeWeights, Examples) {
  EXPECT_EQ(normalize_weights(std::vector<double>{3.0}), std::vector<double>{1.0});
  EXPECT_EQ(normalize_weights(std::vector<double>{1, 1, 2}), (std::vector<double>{0.25, 0.25, 0.5}));
  EXPECT_EQ(code_of([] { (void)normalize_weights(std::vector<double>{0, 0}); }), ErrorCode::degenerate_weights);
  EXPECT_EQ(code_of([] { (void)normalize_weights(std::vector<double>{1, -1}); }), ErrorCode::degenerate_weights);
}

TEST(NormalizeWeights, PropertySumsToOneAndPreservesRatios) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> raw(1 + trial % 20);
    for (auto& w : raw) w = u(rng);
    const auto w = normalize_weights(raw);
    double sum = 0.0;
    for (double x : w) {
      EXPECT_GE(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (std::size_t j = 1; j < raw.size(); ++j) EXPECT_NEAR(w[j] * raw[0], w[0] * raw[j], 1e-9);
  }
}

TEST(MakeAspectScore, KeepsOrderAndIds) {
  const auto s = make_aspect_score(Aspect::coherence, {"x", "y"}, std::vector<double>{-1.0, -3.0},
                                   std::vector<double>{2.0, 2.0});
  ASSERT_EQ(s.parts.size(), 2u);
  EXPECT_EQ(s.parts[0].evaluator_id, "x");
  EXPECT_EQ(s.parts[1].evaluator_id, "y");
  EXPECT_DOUBLE_EQ(s.value, -2.0);
}

TEST(AttributeSet, Preconditions) {
  EXPECT_EQ(code_of([] { AttributeSet({"only"}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { AttributeSet({"a", "a"}); }), ErrorCode::invalid_argument);
  const AttributeSet set({"Positive", "Negative"});
  EXPECT_EQ(set.index_of("Negative"), 1u);
  EXPECT_TRUE(set.contains("Positive"));
  EXPECT_FALSE(set.contains("positive"));
}

TEST(PatternEvaluator, Validation) {
  EXPECT_NO_THROW(validate(PatternEvaluator{"e", "A " + std::string(kMask), std::string("B")}));
  EXPECT_EQ(code_of([] { validate(PatternEvaluator{"e", "no mask", std::string("B")}); }),
            ErrorCode::invalid_request);
  EXPECT_EQ(code_of([] {
              validate(PatternEvaluator{"e", std::string(kMask) + std::string(kMask), std::string("B")});
            }),
            ErrorCode::invalid_request);
  EXPECT_EQ(code_of([] { validate(PatternEvaluator{"e", std::string(kMask), std::string()}); }),
            ErrorCode::invalid_request);
}

TEST(Aspect, NamesRoundTrip) {
  for (auto a : {Aspect::coherence, Aspect::consistency, Aspect::attribute_relevance}) {
    EXPECT_EQ(parse_aspect(to_string(a)), a);
  }
  EXPECT_EQ(parse_aspect("attr-rel"), Aspect::attribute_relevance);
  EXPECT_FALSE(parse_aspect("fluency").has_value());
}

TEST(Error, RetriableOnlyForTransport) {
  EXPECT_TRUE(Error(ErrorCode::transport, "x").retriable());
  EXPECT_FALSE(Error(ErrorCode::protocol, "x").retriable());
  const ScorerError e(ErrorCode::transport, "req-7", "timeout");
  EXPECT_EQ(e.request_id(), "req-7");
  EXPECT_NE(std::string(e.what()).find("req-7"), std::string::npos);
}

TEST(CounterRng, ReproducibleAndStreamSeparated) {
  CounterRng a(42, 1), b(42, 1), c(42, 2);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(CounterRng, NextBelowIsRoughlyUniform) {
  CounterRng rng(3);
  std::array<int, 5> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[rng.next_below(5)];
  for (int c : counts) EXPECT_NEAR(c / double(n), 0.2, 0.01);
}
