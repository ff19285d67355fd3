#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "xgl/protocols.hpp"

using namespace xgl;

namespace {

std::vector<ClassProbabilities> random_probs(std::size_t n, Rng& rng, bool with_ties) {
  std::vector<ClassProbabilities> out(n);
  for (auto& p : out) {
    const double p1 = with_ties ? std::round(rng.uniform() * 8) / 8 : rng.uniform();
    p = probabilities_from_p1(p1);
  }
  return out;
}

std::vector<std::size_t> random_unlabeled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < n; ++p)
    if (rng.uniform() < 0.7) out.push_back(p);
  if (out.empty()) out.push_back(0);
  return out;
}

// Rule set over positions 0..n-1 where rule k covers a contiguous block.
RuleSet block_rules(const std::vector<std::size_t>& sizes, const std::vector<Label>& labels) {
  RuleSet rs;
  std::size_t next = 0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    Rule r;
    r.id = static_cast<int>(k);
    r.label = labels[k];
    for (std::size_t i = 0; i < sizes[k]; ++i) r.coverage.push_back(next++);
    rs.rules.push_back(r);
  }
  return rs;
}

SupervisorSim sim_with(std::vector<Label> truth, double theta) {
  SupervisorSim s;
  s.truth = std::move(truth);
  s.theta = theta;
  return s;
}

}  // namespace

TEST(SelectRandom, SingletonAndDeterminism) {
  std::vector<std::size_t> one{7};
  Rng rng(1);
  EXPECT_EQ(select_random(one, rng), 7u);
  std::vector<std::size_t> pool{1, 2, 3, 4, 5};
  Rng a(9), b(9);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(select_random(pool, a), select_random(pool, b));
  EXPECT_THROW(select_random(std::vector<std::size_t>{}, rng), Error);
}

TEST(SelectRandom, FrequenciesWithinThreeSigma) {
  std::vector<std::size_t> pool(10);
  for (std::size_t i = 0; i < 10; ++i) pool[i] = 10 + i;
  Rng rng(2);
  const int n = 10000;
  std::vector<int> counts(10, 0);
  for (int i = 0; i < n; ++i) ++counts[select_random(pool, rng) - 10];
  const double sigma = std::sqrt(n * 0.1 * 0.9);
  double chi2 = 0;
  for (int c : counts) {
    EXPECT_LT(std::abs(c - n * 0.1), 3 * sigma);
    chi2 += (c - n * 0.1) * (c - n * 0.1) / (n * 0.1);
  }
  EXPECT_LT(chi2, 27.88);  // 0.999 quantile, 9 dof
}

TEST(SelectUncertain, ZeroMarginWins) {
  std::vector<ClassProbabilities> probs{{0.9, 0.1}, {0.2, 0.8}, {0.5, 0.5}, {0.99, 0.01}};
  std::vector<std::size_t> pool{0, 1, 2, 3};
  EXPECT_EQ(select_uncertain(pool, probs), 2u);
}

TEST(SelectUncertain, MatchesBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(200);
    const auto probs = random_probs(n, rng, trial % 2 == 0);
    const auto pool = random_unlabeled(n, rng);
    std::size_t expected = pool[0];
    for (std::size_t p : pool) {
      const double g = std::abs(probs[p].p1 - probs[p].p0), ge = std::abs(probs[expected].p1 - probs[expected].p0);
      if (g < ge) expected = p;
    }
    EXPECT_EQ(select_uncertain(pool, probs), expected);
  }
}

TEST(SelectUncertain, InvariantToMarginRescaling) {
  Rng rng(4);
  const auto probs = random_probs(60, rng, false);
  std::vector<ClassProbabilities> shrunk;
  for (const auto& p : probs) shrunk.push_back(probabilities_from_p1(0.5 + 0.3 * (p.p1 - 0.5)));
  const auto pool = random_unlabeled(60, rng);
  EXPECT_EQ(select_uncertain(pool, probs), select_uncertain(pool, shrunk));
}

TEST(SelectRepresentative, MatchesBruteForce) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(150), d = 1 + rng.index(4);
    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) x(i, j) = rng.uniform(-1, 1);
    const auto probs = random_probs(n, rng, false);
    const auto pool = random_unlabeled(n, rng);
    const SimilarityMatrix sim(x);
    std::size_t expected = pool[0];
    double best = -1e300;
    for (std::size_t p : pool) {
      double density = 0;
      for (std::size_t q : pool) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t j = 0; j < d; ++j) {
          dot += x(p, j) * x(q, j);
          na += x(p, j) * x(p, j);
          nb += x(q, j) * x(q, j);
        }
        density += dot / std::sqrt(na * nb);
      }
      const double score = (1 - std::max(probs[p].p0, probs[p].p1)) * density / static_cast<double>(pool.size());
      if (score > best + 1e-12) {
        best = score;
        expected = p;
      }
    }
    EXPECT_EQ(select_representative(pool, probs, sim, 1.0), expected) << trial;
  }
}

TEST(SelectRepresentative, BetaZeroIsLeastConfidence) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x(40, 3);
    for (std::size_t i = 0; i < 40; ++i)
      for (std::size_t j = 0; j < 3; ++j) x(i, j) = rng.uniform(-1, 1);
    const auto probs = random_probs(40, rng, trial % 2 == 0);
    const auto pool = random_unlabeled(40, rng);
    EXPECT_EQ(select_representative(pool, probs, SimilarityMatrix(x), 0.0), select_uncertain(pool, probs));
  }
}

TEST(SelectRepresentative, IdenticalCandidatesLowerIndexWins) {
  Matrix x(3, 2, {1, 1, 0.5, 2, 0.5, 2});
  std::vector<ClassProbabilities> probs{{0.9, 0.1}, {0.5, 0.5}, {0.5, 0.5}};
  std::vector<std::size_t> pool{0, 1, 2};
  EXPECT_EQ(select_representative(pool, probs, SimilarityMatrix(x), 1.0), 1u);
}

TEST(SelectRepresentative, ZeroVectorHasZeroSimilarity) {
  Matrix x(2, 2, {0, 0, 1, 0});
  EXPECT_EQ(cosine_similarity(x.row(0), x.row(1)), 0.0);
  EXPECT_EQ(cosine_similarity(x.row(0), x.row(0)), 0.0);
}

TEST(SelectGuided, PicksTargetAndFallsBack) {
  std::vector<Label> truth{0, 0, 1, 0, 0};
  std::vector<std::size_t> pool{0, 1, 2, 3, 4};
  Rng rng(7);
  bool fell_back = true;
  EXPECT_EQ(select_guided(pool, truth, 1, rng, &fell_back), 2u);
  EXPECT_FALSE(fell_back);
  std::vector<std::size_t> no_pos{0, 1, 3};
  const auto p = select_guided(no_pos, truth, 1, rng, &fell_back);
  EXPECT_TRUE(fell_back);
  EXPECT_TRUE(p == 0 || p == 1 || p == 3);
}

TEST(RuleChoice, SoftmaxClosedForms) {
  std::vector<double> m{0.2, 0.7, 0.4};
  for (double p : rule_choice_probabilities(m, 0.0)) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
  std::vector<double> two{1.0, 0.0};
  const auto p = rule_choice_probabilities(two, 100.0);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-100.0)), 1e-15);
  std::vector<double> shifted{5.2, 5.7, 5.4};
  const auto a = rule_choice_probabilities(m, 3.0), b = rule_choice_probabilities(shifted, 3.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
  double total = 0;
  for (double v : a) total += v;
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(SelectXgl, FrequenciesMatchSoftmax) {
  // Every rule holds mistakes so the first draw always succeeds.
  const std::vector<std::size_t> sizes{10, 10, 10, 10};
  const std::vector<Label> labels{1, 1, 1, 1};
  RuleSet rs = block_rules(sizes, labels);
  std::vector<Label> truth(40, 1);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t i = 0; i <= k; ++i) truth[k * 10 + i] = 0;
  rs = score_rules(rs, truth);
  const PoolPartition pool(40, std::vector<std::size_t>{});
  for (double theta : {0.0, 3.0, 10.0}) {
    const auto sim = sim_with(truth, theta);
    std::vector<double> m;
    for (const auto& r : rs.rules) m.push_back(1 - r.f1);
    const auto expected = rule_choice_probabilities(m, theta);
    Rng rng(8);
    const int n = 10000;
    std::vector<int> counts(4, 0);
    for (int i = 0; i < n; ++i) {
      const auto c = select_xgl(rs, pool, sim, rng);
      ASSERT_EQ(c.draws, 1u);
      ++counts[c.rule_id];
      EXPECT_NE(truth[c.position], rs.rules[c.rule_id].label);
    }
    for (std::size_t k = 0; k < 4; ++k) {
      const double sigma = std::sqrt(n * expected[k] * (1 - expected[k]));
      EXPECT_LE(std::abs(counts[k] - n * expected[k]), 3 * sigma + 1e-9) << theta << " rule " << k;
    }
  }
}

TEST(SelectXgl, MistakeFreeRulesFallBackToRandom) {
  RuleSet rs = block_rules({3, 3}, {0, 1});
  std::vector<Label> truth{0, 0, 0, 1, 1, 1};
  rs = score_rules(rs, truth);
  const PoolPartition pool(6, std::vector<std::size_t>{0});
  const auto sim = sim_with(truth, 100);
  Rng rng(9);
  std::set<std::size_t> seen;
  for (int i = 0; i < 200; ++i) {
    const auto c = select_xgl(rs, pool, sim, rng);
    EXPECT_EQ(c.rule_id, -1);
    EXPECT_EQ(c.draws, 2u);
    EXPECT_FALSE(pool.is_labeled(c.position));
    seen.insert(c.position);
  }
  EXPECT_EQ(seen.size(), 5u);
}

TEST(SelectXgl, RedrawsWhenChosenRuleHasNoUnlabeledMistake) {
  // Rule 0 is worst but its only mistake is already labeled.
  RuleSet rs = block_rules({2, 4}, {1, 1});
  std::vector<Label> truth{0, 1, 1, 1, 1, 0};
  rs = score_rules(rs, truth);
  const PoolPartition pool(6, std::vector<std::size_t>{0});
  const auto sim = sim_with(truth, 100);
  Rng rng(10);
  const auto c = select_xgl(rs, pool, sim, rng);
  EXPECT_EQ(c.position, 5u);
  EXPECT_EQ(c.rule_id, 1);
  EXPECT_EQ(c.first_rule, 0);
  EXPECT_TRUE(c.first_rule_minimal);
  EXPECT_EQ(c.draws, 2u);
}

TEST(SelectXgl, FullyLabeledRulesAreIneligible) {
  RuleSet rs = block_rules({2, 2}, {1, 0});
  std::vector<Label> truth{0, 0, 1, 1};
  rs = score_rules(rs, truth);
  const PoolPartition pool(4, std::vector<std::size_t>{0, 1});
  EXPECT_EQ(eligible_rules(rs, pool.labeled_mask()), (std::vector<std::size_t>{1}));
}

TEST(PoolPartitionTest, RevealMovesOnce) {
  PoolPartition pool(5, std::vector<std::size_t>{1, 3});
  EXPECT_EQ(pool.unlabeled(), (std::vector<std::size_t>{0, 2, 4}));
  pool.reveal(2);
  EXPECT_TRUE(pool.is_labeled(2));
  EXPECT_EQ(pool.unlabeled(), (std::vector<std::size_t>{0, 4}));
  EXPECT_THROW(pool.reveal(2), Error);
  EXPECT_THROW(PoolPartition(3, std::vector<std::size_t>{1, 1}), Error);
}

class LoopTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new Dataset(generate_synthetic(0));
    folds_ = new std::vector<FoldSplit>(stratified_kfold(*data_, 5, 0));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete folds_;
  }
  static const Dataset& data() { return *data_; }
  static const FoldSplit& fold() { return (*folds_)[0]; }
  static ModelSpec svm() { return ModelSpec::rbf_svm(100.0, 100.0); }

  static std::size_t red_clusters(const LoopResult& r) {
    std::set<std::size_t> clusters;
    for (const auto& q : r.state.query_log)
      if (q.truth == 1) clusters.insert(q.instance / 4);
    return clusters.size();
  }

 private:
  static inline Dataset* data_ = nullptr;
  static inline std::vector<FoldSplit>* folds_ = nullptr;
};

TEST_F(LoopTest, BudgetOneLogsOneQuery) {
  for (Strategy s : {Strategy::random, Strategy::al_unc, Strategy::al_repr, Strategy::gl, Strategy::xgl}) {
    const auto r = run_loop(data(), fold(), s, svm(), 1, 100, 0);
    EXPECT_EQ(r.state.query_log.size(), 1u);
    EXPECT_EQ(r.state.pool.labeled().size(), 6u);
    EXPECT_EQ(r.state.iteration, 1);
  }
  EXPECT_THROW(run_loop(data(), fold(), Strategy::random, svm(), 0, 100, 0), Error);
}

TEST_F(LoopTest, StateInvariants) {
  const auto r = run_loop(data(), fold(), Strategy::xgl, svm(), 30, 100, 1);
  const auto& pool = r.state.pool;
  std::set<std::size_t> labeled(pool.labeled().begin(), pool.labeled().end());
  EXPECT_EQ(labeled.size(), pool.labeled().size());
  for (std::size_t u : pool.unlabeled()) EXPECT_FALSE(labeled.count(u));
  EXPECT_EQ(labeled.size() + pool.unlabeled().size(), fold().train_indices.size());
  EXPECT_EQ(static_cast<int>(r.state.query_log.size()), r.state.iteration);
  std::set<std::size_t> queried;
  for (const auto& q : r.state.query_log) {
    EXPECT_TRUE(queried.insert(q.instance).second);
    EXPECT_TRUE(std::binary_search(fold().train_indices.begin(), fold().train_indices.end(), q.instance));
    EXPECT_EQ(q.truth, data().labels[q.instance]);
  }
}

TEST_F(LoopTest, QueryLogReplaysAgainstArchivedModels) {
  LoopOptions opt;
  opt.archive_models = true;
  for (Strategy s : {Strategy::al_unc, Strategy::xgl}) {
    const auto r = run_loop(data(), fold(), s, svm(), 25, 100, 2, opt);
    ASSERT_EQ(r.archived_models.size(), 25u);
    for (std::size_t t = 0; t < 25; ++t) {
      const auto& q = r.state.query_log[t];
      EXPECT_EQ(r.archived_models[t].probabilities(data().features.row(q.instance)).argmax(), q.predicted);
      EXPECT_EQ(r.archived_models[t].predict_proba(data().features.select_rows(fold().test_indices)).size(),
                fold().test_indices.size());
    }
  }
}

TEST_F(LoopTest, Deterministic) {
  const auto a = run_loop(data(), fold(), Strategy::xgl, svm(), 20, 10, 3);
  const auto b = run_loop(data(), fold(), Strategy::xgl, svm(), 20, 10, 3);
  ASSERT_EQ(a.state.query_log.size(), b.state.query_log.size());
  for (std::size_t t = 0; t < a.state.query_log.size(); ++t) {
    EXPECT_EQ(a.state.query_log[t].instance, b.state.query_log[t].instance);
    EXPECT_EQ(a.trace[t].test_macro_f1, b.trace[t].test_macro_f1);
  }
}

TEST_F(LoopTest, GuidedLearningBalancesClasses) {
  const auto r = run_loop(data(), fold(), Strategy::gl, svm(), 100, 100, 4);
  int pos = 0, neg = 0;
  for (const auto& q : r.state.query_log) {
    (q.truth == 1 ? pos : neg)++;
    EXPECT_LE(std::abs(pos - neg), 1);
  }
  EXPECT_EQ(r.state.query_log.front().truth, 1);
  for (const auto& tr : r.trace) EXPECT_FALSE(tr.fallback);
}

TEST_F(LoopTest, GuidedLearningFallsBackWhenClassExhausted) {
  SyntheticParams small;
  small.n_red = 25;
  small.n_blue = 200;
  const Dataset d = generate_synthetic(1, small);
  const auto folds = stratified_kfold(d, 5, 0);
  const auto r = run_loop(d, folds[0], Strategy::gl, ModelSpec::rbf_svm(100, 100), 60, 100, 0);
  std::size_t fallbacks = 0;
  for (const auto& tr : r.trace) fallbacks += tr.fallback;
  EXPECT_GT(fallbacks, 0u);
}

TEST_F(LoopTest, ExhaustionStopsEarly) {
  SyntheticParams tiny;
  tiny.n_red = 25;
  tiny.n_blue = 30;
  const Dataset d = generate_synthetic(2, tiny);
  const auto folds = stratified_kfold(d, 5, 0);
  const auto r = run_loop(d, folds[0], Strategy::random, ModelSpec::rbf_svm(100, 100), 100, 100, 0);
  EXPECT_TRUE(r.exhausted);
  EXPECT_EQ(r.state.query_log.size(), folds[0].train_indices.size() - 5);
  EXPECT_TRUE(r.state.pool.unlabeled().empty());
}

TEST_F(LoopTest, XglFindsMoreRedClustersThanUncertainty) {
  const auto xgl = run_loop(data(), fold(), Strategy::xgl, svm(), 100, 100, 0);
  const auto unc = run_loop(data(), fold(), Strategy::al_unc, svm(), 100, 100, 0);
  EXPECT_GE(red_clusters(xgl), 15u);
  EXPECT_LE(red_clusters(unc), 8u);
}

TEST_F(LoopTest, XglTraceRecordsRuleStatistics) {
  const auto r = run_loop(data(), fold(), Strategy::xgl, svm(), 10, 100, 5);
  for (std::size_t t = 0; t < r.trace.size(); ++t) {
    const auto& tr = r.trace[t];
    EXPECT_GE(tr.rule_count, 1u);
    EXPECT_LE(tr.rule_count, 30u);
    EXPECT_GE(tr.fidelity, 0.0);
    EXPECT_LE(tr.fidelity, 1.0);
    EXPECT_EQ(tr.fallback, r.state.query_log[t].rule_id < 0);
  }
}

TEST_F(LoopTest, QueryLogCsv) {
  const auto r = run_loop(data(), fold(), Strategy::xgl, svm(), 3, 100, 6);
  std::ostringstream out;
  write_query_log_csv(out, r.state.query_log, Strategy::xgl);
  const std::string s = out.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "iteration,instance_id,strategy,predicted_label,true_label,rule_id");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
  EXPECT_NE(s.find("\n1," + std::to_string(r.state.query_log[0].instance) + ",xgl,"), std::string::npos);
}

TEST(StrategyNames, RoundTrip) {
  for (Strategy s : kAllStrategies) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("bogus"), Error);
}
