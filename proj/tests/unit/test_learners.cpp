#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xgl/data/dataset.hpp"
#include "xgl/learners/model.hpp"
#include "xgl/metrics.hpp"

using namespace xgl;

namespace {

struct Toy {
  Matrix x;
  std::vector<Label> y;
  std::vector<double> w;
};

Toy random_toy(std::uint64_t seed, std::size_t n, std::size_t d) {
  Rng rng(seed);
  Toy t{Matrix(n, d), {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      t.x(i, j) = rng.uniform(-1, 1);
      s += t.x(i, j) * (j % 2 ? -1.0 : 1.0);
    }
    t.y.push_back(s + 0.3 * rng.normal() > 0 ? 1 : 0);
    t.w.push_back(rng.uniform(0.5, 2.0));
  }
  return t;
}

std::vector<ModelSpec> all_specs() { return {ModelSpec::rbf_svm(1.0, 10.0), ModelSpec::gbt(20, 2, 0.3), ModelSpec::tree(4)}; }

}  // namespace

TEST(Fit, SeparablePairPerfect) {
  Matrix x(2, 2, {0, 0, 1, 1});
  std::vector<Label> y{0, 1};
  std::vector<double> w{1, 1};
  for (const auto& spec : all_specs()) {
    const auto m = fit(spec, x, y, w, 0);
    EXPECT_EQ(m.predict(x), y) << to_string(spec.kind);
  }
}

TEST(Fit, RejectsSingleClassAndBadWeights) {
  Matrix x(2, 1, {0, 1});
  std::vector<Label> same{1, 1};
  std::vector<double> w{1, 1};
  EXPECT_THROW(fit(ModelSpec::tree(2), x, same, w, 0), Error);
  std::vector<Label> y{0, 1};
  std::vector<double> bad{1, 0};
  EXPECT_THROW(fit(ModelSpec::tree(2), x, y, bad, 0), Error);
}

TEST(ModelSpec, Validation) {
  EXPECT_THROW(ModelSpec::rbf_svm(0.0, 1.0).validate(), Error);
  EXPECT_THROW(ModelSpec::rbf_svm(1.0, -1.0).validate(), Error);
  EXPECT_THROW(ModelSpec::gbt(0).validate(), Error);
  EXPECT_THROW(ModelSpec::tree(0).validate(), Error);
  EXPECT_NO_THROW(ModelSpec::gbt().validate());
  const auto j = nlohmann::json::parse(R"({"kind":"svm","gamma":100,"C":100})");
  const auto s = model_spec_from_json(j);
  EXPECT_EQ(s.kind, ModelKind::rbf_svm);
  EXPECT_EQ(s.get("gamma", 0), 100);
  EXPECT_THROW(model_spec_from_json(nlohmann::json::parse(R"({"kind":"nope"})")), Error);
  EXPECT_THROW(model_spec_from_json(nlohmann::json::parse(R"({"kind":"gbt","rounds":"x"})")), Error);
  EXPECT_THROW(model_spec_from_json(nlohmann::json::parse(R"({"kind":"gbt","max_depth":3})")), Error);
}

TEST(Predict, ArgmaxOfProbabilitiesAndSumToOne) {
  const Toy t = random_toy(1, 120, 3);
  const Toy probe = random_toy(2, 100, 3);
  for (const auto& spec : all_specs()) {
    const auto m = fit(spec, t.x, t.y, t.w, 0);
    const auto labels = m.predict(probe.x);
    const auto probs = m.predict_proba(probe.x);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      EXPECT_NEAR(probs[i].p0 + probs[i].p1, 1.0, 1e-9);
      EXPECT_GE(probs[i].p1, 0.0);
      EXPECT_LE(probs[i].p1, 1.0);
      EXPECT_EQ(labels[i], probs[i].p1 > probs[i].p0 ? 1 : 0);
    }
    EXPECT_EQ(m.predict(probe.x), labels);
  }
}

TEST(Predict, DimensionMismatch) {
  const Toy t = random_toy(1, 30, 2);
  const auto m = fit(ModelSpec::gbt(5), t.x, t.y, t.w, 0);
  EXPECT_THROW(m.predict(Matrix(1, 3)), Error);
}

TEST(Fit, BitReproducible) {
  const Toy t = random_toy(4, 80, 2);
  for (const auto& spec : all_specs()) {
    const auto a = fit(spec, t.x, t.y, t.w, 9);
    const auto b = fit(spec, t.x, t.y, t.w, 9);
    EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  }
}

TEST(Serialization, RoundTripPreservesPredictions) {
  const Toy t = random_toy(5, 80, 3);
  for (const auto& spec : all_specs()) {
    const auto m = fit(spec, t.x, t.y, t.w, 0);
    const auto back = TrainedModel::from_json(nlohmann::json::parse(m.to_json().dump()));
    EXPECT_EQ(back.margins(t.x), m.margins(t.x));
    EXPECT_EQ(back.fingerprint(), m.fingerprint());
  }
  EXPECT_THROW(TrainedModel::from_json(nlohmann::json::parse(R"({"v":99})")), Error);
}

TEST(Tree, OneLeafPerPointInterpolates) {
  const Toy t = random_toy(6, 50, 2);
  const auto m = fit(ModelSpec::tree(50, 1), t.x, t.y, t.w, 0);
  EXPECT_EQ(m.predict(t.x), t.y);
}

TEST(Tree, DoublingWeightsKeepsStructure) {
  const Toy t = random_toy(7, 150, 3);
  std::vector<double> w2 = t.w;
  for (double& v : w2) v *= 2;
  const auto a = DecisionTree::fit_classifier(t.x, t.y, t.w, {5, 2, 0});
  const auto b = DecisionTree::fit_classifier(t.x, t.y, w2, {5, 2, 0});
  EXPECT_TRUE(a.same_structure(b));
}

TEST(Tree, DeeperTreeRefinesShallower) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Toy t = random_toy(100 + seed, 200, 3);
    double prev = 0.0;
    for (int depth = 1; depth <= 7; ++depth) {
      const auto tree = DecisionTree::fit_classifier(t.x, t.y, t.w, {depth, 3, 0});
      std::size_t correct = 0;
      for (std::size_t i = 0; i < t.y.size(); ++i) correct += (tree.value(t.x.row(i)) > 0.5) == (t.y[i] == 1);
      const double acc = static_cast<double>(correct) / t.y.size();
      EXPECT_GE(acc + 1e-12, prev) << "seed " << seed << " depth " << depth;
      prev = acc;
    }
  }
}

TEST(Tree, TieBreakLowestFeatureThenThreshold) {
  // Features 0 and 1 are copies; the split must use feature 0.
  Matrix x(4, 2, {0, 0, 1, 1, 2, 2, 3, 3});
  std::vector<Label> y{0, 0, 1, 1};
  std::vector<double> w(4, 1.0);
  const auto tree = DecisionTree::fit_classifier(x, y, w, {1, 1, 0});
  EXPECT_EQ(tree.nodes()[0].feature, 0);
  EXPECT_DOUBLE_EQ(tree.nodes()[0].threshold, 1.5);
  // Two equally good thresholds on one feature: lowest wins.
  Matrix x2(4, 1, {0, 1, 2, 3});
  std::vector<Label> y2{0, 1, 1, 0};
  const auto t2 = DecisionTree::fit_classifier(x2, y2, w, {1, 1, 0});
  EXPECT_DOUBLE_EQ(t2.nodes()[0].threshold, 0.5);
}

TEST(Tree, MinLeafRespected) {
  const Toy t = random_toy(8, 100, 2);
  const auto tree = DecisionTree::fit_classifier(t.x, t.y, t.w, {10, 7, 0});
  for (int leaf : tree.leaves()) EXPECT_GE(tree.nodes()[leaf].count, 7u);
}

TEST(Tree, MaxLeavesCap) {
  const Toy t = random_toy(9, 200, 3);
  const auto tree = DecisionTree::fit_classifier(t.x, t.y, t.w, {10, 1, 12});
  EXPECT_LE(tree.leaf_count(), 12u);
  const auto uncapped = DecisionTree::fit_classifier(t.x, t.y, t.w, {10, 1, 0});
  EXPECT_GT(uncapped.leaf_count(), 12u);
}

TEST(Gbt, ZeroRoundsIsWeightedBaseRate) {
  const Toy t = random_toy(10, 60, 2);
  const auto m = GradientBoostedTrees::fit(t.x, t.y, t.w, {0, 3, 0.1, 1});
  double wp = 0, wt = 0;
  for (std::size_t i = 0; i < t.y.size(); ++i) {
    wt += t.w[i];
    wp += t.w[i] * t.y[i];
  }
  for (std::size_t i = 0; i < t.y.size(); ++i) EXPECT_NEAR(sigmoid(m.score(t.x.row(i))), wp / wt, 1e-12);
}

TEST(Gbt, LossNonIncreasing) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Toy t = random_toy(20 + seed, 150, 3);
    const auto m = GradientBoostedTrees::fit(t.x, t.y, t.w, {100, 3, 0.1, 1});
    const auto& h = m.loss_history();
    ASSERT_EQ(h.size(), 101u);
    for (std::size_t r = 1; r < h.size(); ++r) EXPECT_LE(h[r], h[r - 1] + 1e-12);
  }
}

TEST(Svm, KktWithinTolerance) {
  const Toy t = random_toy(30, 120, 2);
  const SvmParams p{2.0, 5.0, 1e-3, 0};
  const auto m = RbfSvm::fit(t.x, t.y, t.w, p);
  ASSERT_TRUE(m.converged());
  const auto& d = m.dual();
  const double sum_ay = std::inner_product(d.alpha.begin(), d.alpha.end(), d.y.begin(), 0.0);
  EXPECT_NEAR(sum_ay, 0.0, 1e-8);
  for (std::size_t i = 0; i < t.y.size(); ++i) {
    ASSERT_GE(d.alpha[i], 0.0);
    ASSERT_LE(d.alpha[i], d.upper[i]);
    const double yf = d.y[i] * m.decision(t.x.row(i));
    if (d.alpha[i] <= 0.0) EXPECT_GE(yf, 1.0 - 1e-3) << i;
    else if (d.alpha[i] >= d.upper[i]) EXPECT_LE(yf, 1.0 + 1e-3) << i;
    else EXPECT_NEAR(yf, 1.0, 1e-3) << i;
  }
}

TEST(Svm, PerExampleBoxConstraint) {
  const Toy t = random_toy(31, 80, 2);
  std::vector<double> w = t.w;
  w[0] = 25.0;
  const auto m = RbfSvm::fit(t.x, t.y, w, {1.0, 2.0, 1e-3, 0});
  EXPECT_DOUBLE_EQ(m.dual().upper[0], 50.0);
  EXPECT_DOUBLE_EQ(m.dual().upper[1], 2.0 * w[1]);
}

TEST(Svm, ProbabilityRankingMatchesMarginRanking) {
  const Toy t = random_toy(32, 100, 2);
  const Toy probe = random_toy(33, 200, 2);
  const auto m = fit(ModelSpec::rbf_svm(3.0, 10.0), t.x, t.y, t.w, 0);
  const auto probs = m.predict_proba(probe.x);
  const auto margins = m.margins(probe.x);
  std::vector<std::size_t> by_prob(probs.size()), by_margin(probs.size());
  std::iota(by_prob.begin(), by_prob.end(), 0);
  std::iota(by_margin.begin(), by_margin.end(), 0);
  std::stable_sort(by_prob.begin(), by_prob.end(), [&](auto a, auto b) {
    return std::abs(probs[a].p1 - probs[a].p0) < std::abs(probs[b].p1 - probs[b].p0);
  });
  std::stable_sort(by_margin.begin(), by_margin.end(),
                   [&](auto a, auto b) { return std::abs(margins[a]) < std::abs(margins[b]); });
  EXPECT_EQ(by_prob, by_margin);
}

TEST(Svm, PassiveSyntheticFloor) {
  const Dataset d = generate_synthetic(0);
  const auto folds = stratified_kfold(d, 5, 0);
  for (const auto& f : folds) {
    const Dataset train = d.subset(f.train_indices);
    const Dataset test = d.subset(f.test_indices);
    const auto m = fit(ModelSpec::rbf_svm(100, 100), train.features, train.labels, train.weights, 0);
    EXPECT_GE(macro_f1(m.predict(test.features), test.labels), 0.95) << "fold " << f.fold_index;
  }
}
