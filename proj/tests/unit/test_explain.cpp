#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "xgl/data/dataset.hpp"
#include "xgl/explain.hpp"

using namespace xgl;

namespace {

struct Pair {
  TrainedModel model;
  Matrix pool;
};

Pair random_pair(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = 40 + rng.index(60), d = 2 + rng.index(3);
  Matrix x(n, d);
  std::vector<Label> y;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += (x(i, j) = rng.uniform(-1, 1)) * (j % 2 ? 1.0 : -0.7);
    y.push_back(std::sin(3 * s) + 0.2 * rng.normal() > 0 ? 1 : 0);
  }
  if (std::count(y.begin(), y.end(), 1) == 0) y[0] = 1;
  if (std::count(y.begin(), y.end(), 0) == 0) y[0] = 0;
  const std::vector<double> w(n, 1.0);
  const ModelSpec spec = seed % 2 ? ModelSpec::gbt(30, 2, 0.3) : ModelSpec::rbf_svm(2.0, 10.0);
  auto m = fit(spec, x, y, w, seed);
  Matrix pool(200, d);
  for (std::size_t i = 0; i < pool.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) pool(i, j) = rng.uniform(-1, 1);
  return {std::move(m), std::move(pool)};
}

RuleSet hand_rules(const std::vector<std::pair<Label, std::vector<std::size_t>>>& spec) {
  RuleSet rs;
  int id = 0;
  for (const auto& [label, cov] : spec) {
    Rule r;
    r.id = id++;
    r.label = label;
    r.coverage = cov;
    rs.rules.push_back(r);
  }
  return rs;
}

}  // namespace

TEST(Distill, TreeWithinBudgetIsReproducedExactly) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset d = generate_synthetic(seed);
    const auto model = fit(ModelSpec::tree(3, 1), d.features, d.labels, d.weights, 0);
    const auto rs = distill(model, d.features, {3, 1, 0});
    EXPECT_DOUBLE_EQ(rs.fidelity, 1.0) << seed;
    EXPECT_LE(rs.size(), 8u);
  }
}

TEST(Distill, PartitionOnPoolAndRandomPoints) {
  const auto p = random_pair(3);
  const auto rs = distill(p.model, p.pool, {});
  std::vector<int> covered(p.pool.rows(), 0);
  for (const auto& r : rs.rules)
    for (std::size_t i : r.coverage) ++covered[i];
  for (std::size_t i = 0; i < p.pool.rows(); ++i) {
    EXPECT_EQ(covered[i], 1);
    int matches = 0;
    for (const auto& r : rs.rules) matches += r.matches(p.pool.row(i));
    EXPECT_EQ(matches, 1);
    EXPECT_TRUE(rs.rules[rs.rule_index(p.pool.row(i))].matches(p.pool.row(i)));
  }
  Rng rng(1);
  std::vector<double> x(p.pool.cols());
  for (int k = 0; k < 1000; ++k) {
    for (double& v : x) v = rng.uniform(-3, 3);
    int matches = 0;
    for (const auto& r : rs.rules) matches += r.matches(x);
    ASSERT_EQ(matches, 1);
  }
}

TEST(Distill, CoverageIsExactlyThePredicateSet) {
  const auto p = random_pair(4);
  const auto rs = distill(p.model, p.pool, {});
  for (const auto& r : rs.rules) {
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < p.pool.rows(); ++i)
      if (r.matches(p.pool.row(i))) expected.push_back(i);
    EXPECT_EQ(r.coverage, expected);
  }
}

TEST(Distill, PredicatesAreSimplifiedAndFeasible) {
  const auto p = random_pair(5);
  const auto rs = distill(p.model, p.pool, {8, 1, 0});
  for (const auto& r : rs.rules) {
    std::map<std::pair<std::size_t, bool>, int> seen;
    for (const auto& pr : r.predicates) {
      const int count = ++seen[std::make_pair(pr.feature, pr.less_equal)];
      EXPECT_EQ(count, 1);
    }
    for (const auto& lo : r.predicates)
      for (const auto& hi : r.predicates) {
        if (!lo.less_equal && hi.less_equal && lo.feature == hi.feature) {
          EXPECT_LT(lo.threshold, hi.threshold);
        }
      }
  }
}

TEST(Distill, RulePredictionsMatchSurrogateTree) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto p = random_pair(seed);
    const auto rs = distill(p.model, p.pool, {});
    const auto pred = predict_with_rules(rs, p.pool);
    for (std::size_t i = 0; i < p.pool.rows(); ++i) EXPECT_EQ(pred[i], rs.surrogate.value(p.pool.row(i)) > 0.5 ? 1 : 0);
  }
}

TEST(Distill, ConstantModelGivesSingleRule) {
  Matrix x(3, 1, {0, 1, 2});
  std::vector<Label> preds{1, 1, 1};
  const auto rs = distill_labels(preds, x, {6, 1, 0});
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_TRUE(rs.rules[0].predicates.empty());
  EXPECT_EQ(predict_with_rules(rs, Matrix(2, 1, {-5, 5})), (std::vector<Label>{1, 1}));
}

TEST(Distill, RuleCapAndDefaults) {
  const auto p = random_pair(7);
  EXPECT_LE(distill(p.model, p.pool, {10, 1, 12}).size(), 12u);
  SurrogateParams sp;
  EXPECT_EQ(sp.effective_min_leaf(100), 3u);
  EXPECT_EQ(sp.effective_min_leaf(1000), 5u);
}

TEST(Distill, PoolSmallerThanMinLeaf) {
  Matrix x(2, 1, {0, 1});
  std::vector<Label> preds{0, 1};
  EXPECT_THROW(distill_labels(preds, x, {3, 5, 0}), Error);
}

TEST(Distill, FidelityMonotoneInDepth) {
  int violations = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = random_pair(100 + seed);
    double prev = 0.0;
    for (int depth = 1; depth <= 8; ++depth) {
      const double f = distill(p.model, p.pool, {depth, 3, 0}).fidelity;
      if (f + 1e-12 < prev) ++violations;
      prev = f;
    }
  }
  EXPECT_EQ(violations, 0);
}

TEST(ScoreRules, HandValues) {
  // truth:         0  1  2  3  4  5  6  7  8  9 10 11 12 13
  std::vector<Label> truth{1, 1, 1, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0};
  RuleSet rs = hand_rules({{1, {0, 1, 2}}, {1, {3, 4, 5}}, {0, {4, 5, 6, 7, 8, 9, 10, 11, 12, 13}}});
  rs.rules[2].coverage = {3, 4, 5, 6, 7, 8, 9, 10, 11, 12};  // 5 zeros, 5 ones
  rs.rules[1].coverage = {13};
  const auto out = score_rules(rs, truth);
  EXPECT_DOUBLE_EQ(out.rules[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(out.rules[0].f1, 1.0);
  EXPECT_DOUBLE_EQ(out.rules[0].mistakes, 0.0);
  EXPECT_DOUBLE_EQ(out.rules[1].precision, 0.0);
  EXPECT_DOUBLE_EQ(out.rules[1].f1, 0.0);
  EXPECT_DOUBLE_EQ(out.rules[1].mistakes, 1.0);
  EXPECT_DOUBLE_EQ(out.rules[2].precision, 0.5);
  EXPECT_NEAR(out.rules[2].f1, 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(out.rules[2].mistakes, 5.0);
}

TEST(ScoreRules, OneVsRestMode) {
  std::vector<Label> truth{1, 1, 0, 1, 0, 0};
  const RuleSet rs = hand_rules({{1, {0, 1, 2}}, {0, {3, 4, 5}}});
  const auto out = score_rules(rs, truth, RuleF1Mode::one_vs_rest);
  // Rule 0 as a detector of class 1: tp=2, fp=1, fn=1.
  EXPECT_NEAR(out.rules[0].f1, 4.0 / 6.0, 1e-15);
  // Rule 1 for class 0: tp=2, fp=1, fn=1.
  EXPECT_NEAR(out.rules[1].f1, 4.0 / 6.0, 1e-15);
}

TEST(ScoreRules, MaskAndEligibility) {
  std::vector<Label> truth{1, 0, 0, 1};
  const RuleSet rs = hand_rules({{1, {0, 1}}, {0, {2, 3}}});
  std::vector<char> mask{1, 1, 0, 0};
  const auto out = score_rules(rs, truth, RuleF1Mode::within_coverage, mask);
  EXPECT_TRUE(out.rules[0].eligible);
  EXPECT_DOUBLE_EQ(out.rules[0].precision, 0.5);
  EXPECT_FALSE(out.rules[1].eligible);
  EXPECT_TRUE(std::isnan(out.rules[1].f1));
  std::vector<char> short_mask{1};
  EXPECT_THROW(score_rules(rs, truth, RuleF1Mode::within_coverage, short_mask), Error);
}

TEST(ScoreRules, OrderOblivious) {
  const auto p = random_pair(9);
  const auto rs = distill(p.model, p.pool, {});
  Rng rng(2);
  std::vector<Label> truth(p.pool.rows());
  for (auto& t : truth) t = static_cast<Label>(rng.index(2));
  const auto scored = score_rules(rs, truth);
  RuleSet permuted = rs;
  std::reverse(permuted.rules.begin(), permuted.rules.end());
  const auto scored_perm = score_rules(permuted, truth);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    const auto& a = scored.rules[i];
    const auto& b = scored_perm.rules[rs.size() - 1 - i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.f1, b.f1);
    EXPECT_EQ(a.mistakes, b.mistakes);
  }
}

TEST(ExplanationJson, Schema) {
  const auto p = random_pair(10);
  std::vector<Label> truth(p.pool.rows(), 1);
  const auto rs = score_rules(distill(p.model, p.pool, {}), truth);
  const auto j = to_json(rs);
  EXPECT_EQ(j["v"], 1);
  std::size_t total = 0;
  for (const auto& r : j["rules"]) {
    for (const char* key : {"id", "predicates", "label", "coverage_size", "precision", "f1"}) EXPECT_TRUE(r.contains(key));
    for (const auto& pr : r["predicates"]) {
      EXPECT_TRUE(pr["op"] == "<=" || pr["op"] == ">");
      EXPECT_TRUE(pr.contains("feature") && pr.contains("threshold"));
    }
    total += r["coverage_size"].get<std::size_t>();
  }
  EXPECT_EQ(total, p.pool.rows());
  const auto hidden = to_json(rs, false);
  for (const auto& r : hidden["rules"]) EXPECT_TRUE(r["f1"].is_null());
}

TEST(ExplanationText, OnePredicatePerLine) {
  Rule r;
  r.predicates = {{0, false, 0.25}, {1, true, 0.5}};
  r.label = 1;
  const std::vector<std::string> names{"x0", "x1"};
  EXPECT_EQ(describe(r, names), "x0 > 0.25\nx1 <= 0.5\n=> 1");
}
