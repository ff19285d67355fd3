#pragma once

// Stagewise additive logistic boosting with depth-limited regression trees.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "xgl/core/error.hpp"
#include "xgl/core/matrix.hpp"
#include "xgl/learners/decision_tree.hpp"

namespace xgl {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct GbtParams {
  int rounds = 100;
  int depth = 3;
  double learning_rate = 0.1;
  std::size_t min_leaf = 1;
};

class GradientBoostedTrees {
 public:
  /// `rounds` may be 0, leaving only the prior log-odds.
  static GradientBoostedTrees fit(const Matrix& x, std::span<const Label> labels, std::span<const double> weights,
                                  const GbtParams& params) {
    const std::size_t n = x.rows();
    require(labels.size() == n && weights.size() == n, ErrorCode::dimension_mismatch,
            "GradientBoostedTrees: features, labels and weights differ in length");
    require(params.rounds >= 0 && params.depth >= 1 && params.learning_rate > 0.0,
            ErrorCode::invalid_argument, "GradientBoostedTrees: invalid hyperparameters");

    GradientBoostedTrees model;
    model.learning_rate_ = params.learning_rate;
    double wpos = 0.0, wtot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      wtot += weights[i];
      if (labels[i] == 1) wpos += weights[i];
    }
    const double base = std::clamp(wpos / wtot, 1e-12, 1.0 - 1e-12);
    model.init_score_ = std::log(base / (1.0 - base));

    std::vector<double> score(n, model.init_score_);
    std::vector<double> residual(n);
    model.loss_history_.push_back(weighted_log_loss(score, labels, weights));
    const SortedColumns sorted(x);
    const TreeParams tree_params{params.depth, params.min_leaf, 0};
    for (int round = 0; round < params.rounds; ++round) {
      for (std::size_t i = 0; i < n; ++i) residual[i] = labels[i] - sigmoid(score[i]);
      DecisionTree tree = DecisionTree::fit_regressor(x, sorted, residual, weights, tree_params);

      // One Newton step per leaf: sum w (y - p) / sum w p (1 - p).
      std::vector<double> num(tree.nodes().size(), 0.0), den(tree.nodes().size(), 0.0);
      const auto& leaf_of = tree.training_leaves();
      for (std::size_t i = 0; i < n; ++i) {
        const double p = sigmoid(score[i]);
        num[leaf_of[i]] += weights[i] * residual[i];
        den[leaf_of[i]] += weights[i] * p * (1.0 - p);
      }
      for (int leaf : tree.leaves()) {
        tree.set_leaf_value(leaf, std::abs(den[leaf]) < 1e-150 ? 0.0 : num[leaf] / den[leaf]);
      }
      for (std::size_t i = 0; i < n; ++i) score[i] += params.learning_rate * tree.nodes()[leaf_of[i]].value;
      model.trees_.push_back(std::move(tree));
      model.loss_history_.push_back(weighted_log_loss(score, labels, weights));
    }
    return model;
  }

  /// Additive log-odds score for class 1.
  double score(std::span<const double> row) const {
    double s = init_score_;
    for (const auto& t : trees_) s += learning_rate_ * t.value(row);
    return s;
  }

  double init_score() const { return init_score_; }
  double learning_rate() const { return learning_rate_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }
  /// Weighted training log-loss before the first round and after each round.
  const std::vector<double>& loss_history() const { return loss_history_; }

  static GradientBoostedTrees from_parts(double init_score, double learning_rate, std::vector<DecisionTree> trees) {
    GradientBoostedTrees m;
    m.init_score_ = init_score;
    m.learning_rate_ = learning_rate;
    m.trees_ = std::move(trees);
    return m;
  }

  static double weighted_log_loss(std::span<const double> score, std::span<const Label> labels,
                                  std::span<const double> weights) {
    double loss = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < score.size(); ++i) {
      // log(1 + exp(-z)) for the label-signed score, computed stably.
      const double z = labels[i] == 1 ? score[i] : -score[i];
      const double l = z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
      loss += weights[i] * l;
      wsum += weights[i];
    }
    return loss / wsum;
  }

 private:
  double init_score_ = 0.0;
  double learning_rate_ = 0.1;
  std::vector<DecisionTree> trees_;
  std::vector<double> loss_history_;
};

}  // namespace xgl
