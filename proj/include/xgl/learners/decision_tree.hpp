#pragma once

// Greedy CART trees on weighted samples. The classifier splits on weighted
// Gini; the regressor (used by boosting) splits on weighted squared error.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "xgl/core/error.hpp"
#include "xgl/core/matrix.hpp"

namespace xgl {

struct TreeParams {
  int max_depth = 6;
  std::size_t min_leaf = 1;
  std::size_t max_leaves = 0;  // 0 = unlimited; otherwise grow best-first
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int parent = -1;
  int depth = 0;
  std::size_t count = 0;
  double weight = 0.0;
  double class_weight[2] = {0.0, 0.0};
  double value = 0.0;  // leaf output: P(class 1) for classifiers, additive score for regressors
  double gain = 0.0;
  bool is_leaf() const { return feature < 0; }
};

struct Predicate {
  std::size_t feature = 0;
  bool less_equal = true;  // x[feature] <= threshold, otherwise x[feature] > threshold
  double threshold = 0.0;

  bool holds(std::span<const double> x) const {
    return less_equal ? x[feature] <= threshold : x[feature] > threshold;
  }
  friend bool operator==(const Predicate&, const Predicate&) = default;
};

/// Per-feature row orders sorted by (value, row). Reused across boosting
/// rounds because the design matrix does not change.
class SortedColumns {
 public:
  SortedColumns() = default;
  explicit SortedColumns(const Matrix& x) : order_(x.cols()) {
    for (std::size_t f = 0; f < x.cols(); ++f) {
      auto& o = order_[f];
      o.resize(x.rows());
      std::iota(o.begin(), o.end(), 0u);
      std::stable_sort(o.begin(), o.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return x(a, f) < x(b, f); });
    }
  }
  const std::vector<std::uint32_t>& operator[](std::size_t f) const { return order_[f]; }
  std::size_t features() const { return order_.size(); }

 private:
  std::vector<std::vector<std::uint32_t>> order_;
};

namespace detail {

struct GiniCriterion {
  struct Stats {
    double w[2] = {0.0, 0.0};
    std::size_t n = 0;
    void add(double weight, double target) {
      w[target > 0.5 ? 1 : 0] += weight;
      ++n;
    }
    void remove(double weight, double target) {
      w[target > 0.5 ? 1 : 0] -= weight;
      --n;
    }
    double total() const { return w[0] + w[1]; }
  };
  // W - W * gini = (w0^2 + w1^2) / W; larger is purer.
  static double score(const Stats& s) {
    const double t = s.total();
    return t > 0.0 ? (s.w[0] * s.w[0] + s.w[1] * s.w[1]) / t : 0.0;
  }
  static double scale(const Stats& s) { return s.total(); }
};

struct SquaredErrorCriterion {
  struct Stats {
    double w = 0.0, sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    void add(double weight, double target) {
      w += weight;
      sum += weight * target;
      sum_sq += weight * target * target;
      ++n;
    }
    void remove(double weight, double target) {
      w -= weight;
      sum -= weight * target;
      sum_sq -= weight * target * target;
      --n;
    }
    double total() const { return w; }
  };
  static double score(const Stats& s) { return s.w > 0.0 ? s.sum * s.sum / s.w : 0.0; }
  static double scale(const Stats& s) { return s.sum_sq; }
};

struct SplitChoice {
  bool valid = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  double gain = 0.0;
};

}  // namespace detail

class DecisionTree {
 public:
  DecisionTree() = default;

  /// Weighted-Gini classification tree. Leaves store P(class 1).
  static DecisionTree fit_classifier(const Matrix& x, std::span<const Label> labels,
                                     std::span<const double> weights, const TreeParams& params) {
    check_inputs(x, labels.size(), weights, params);
    std::vector<double> target(labels.begin(), labels.end());
    DecisionTree tree;
    tree.grow<detail::GiniCriterion>(x, SortedColumns(x), target, weights, params);
    for (auto& node : tree.nodes_) {
      node.value = node.weight > 0.0 ? node.class_weight[1] / node.weight : 0.0;
    }
    return tree;
  }

  /// Squared-error regression tree on `target`. Leaf values default to the
  /// weighted mean; callers may overwrite them (see `set_leaf_value`).
  static DecisionTree fit_regressor(const Matrix& x, const SortedColumns& sorted,
                                    std::span<const double> target, std::span<const double> weights,
                                    const TreeParams& params) {
    check_inputs(x, target.size(), weights, params);
    DecisionTree tree;
    tree.grow<detail::SquaredErrorCriterion>(x, sorted, target, weights, params);
    return tree;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(),
                                                  [](const TreeNode& n) { return n.is_leaf(); }));
  }
  std::size_t n_features() const { return n_features_; }

  int leaf_of(std::span<const double> row) const {
    require(row.size() == n_features_, ErrorCode::dimension_mismatch, "DecisionTree: feature count mismatch");
    int node = 0;
    while (!nodes_[node].is_leaf()) {
      const auto& n = nodes_[node];
      node = row[n.feature] <= n.threshold ? n.left : n.right;
    }
    return node;
  }

  double value(std::span<const double> row) const { return nodes_[leaf_of(row)].value; }

  /// Leaf each training row ended up in (same order as the fitted rows).
  const std::vector<int>& training_leaves() const { return training_leaf_; }

  void set_leaf_value(int node, double v) { nodes_.at(node).value = v; }

  /// Leaves in left-to-right order.
  std::vector<int> leaves() const {
    std::vector<int> out;
    std::vector<int> stack{0};
    while (!stack.empty()) {
      const int n = stack.back();
      stack.pop_back();
      if (nodes_[n].is_leaf()) {
        out.push_back(n);
      } else {
        stack.push_back(nodes_[n].right);
        stack.push_back(nodes_[n].left);
      }
    }
    return out;
  }

  /// Conditions along the root-to-leaf path, root first.
  std::vector<Predicate> path(int leaf) const {
    std::vector<Predicate> out;
    for (int child = leaf, parent = nodes_[leaf].parent; parent >= 0;
         child = parent, parent = nodes_[parent].parent) {
      const auto& p = nodes_[parent];
      out.push_back({static_cast<std::size_t>(p.feature), p.left == child, p.threshold});
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  /// Total impurity decrease per feature, normalized to sum to 1.
  std::vector<double> feature_importances() const {
    std::vector<double> imp(n_features_, 0.0);
    for (const auto& n : nodes_)
      if (!n.is_leaf()) imp[n.feature] += n.gain;
    const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (total > 0.0)
      for (double& v : imp) v /= total;
    return imp;
  }

  /// Same split structure (features, thresholds, shape).
  bool same_structure(const DecisionTree& other) const {
    if (nodes_.size() != other.nodes_.size()) return false;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& a = nodes_[i];
      const auto& b = other.nodes_[i];
      if (a.feature != b.feature || a.left != b.left || a.right != b.right) return false;
      if (!a.is_leaf() && a.threshold != b.threshold) return false;
    }
    return true;
  }

  static DecisionTree from_nodes(std::vector<TreeNode> nodes, std::size_t n_features) {
    require(!nodes.empty(), ErrorCode::parse_error, "DecisionTree: no nodes");
    DecisionTree t;
    t.nodes_ = std::move(nodes);
    t.n_features_ = n_features;
    return t;
  }

 private:
  static void check_inputs(const Matrix& x, std::size_t n, std::span<const double> weights,
                           const TreeParams& params) {
    require(x.rows() == n && weights.size() == n, ErrorCode::dimension_mismatch,
            "DecisionTree: features, targets and weights differ in length");
    require(n > 0, ErrorCode::invalid_argument, "DecisionTree: empty training set");
    require(x.cols() > 0, ErrorCode::invalid_argument, "DecisionTree: no features");
    require(params.max_depth >= 1, ErrorCode::invalid_argument, "DecisionTree: max_depth must be >= 1");
    require(params.min_leaf >= 1, ErrorCode::invalid_argument, "DecisionTree: min_leaf must be >= 1");
  }

  struct Pending {
    int node;
    std::vector<std::vector<std::uint32_t>> sorted;  // per feature, rows of this node by value
    detail::SplitChoice split;
  };

  template <typename Criterion>
  static detail::SplitChoice best_split(const Matrix& x, const Pending& p, std::span<const double> target,
                                        std::span<const double> weights, const TreeParams& params) {
    using Stats = typename Criterion::Stats;
    detail::SplitChoice best;
    const auto& any = p.sorted[0];
    const std::size_t n = any.size();
    if (n < 2 * params.min_leaf) return best;
    Stats parent;
    for (std::uint32_t r : any) parent.add(weights[r], target[r]);
    const double parent_score = Criterion::score(parent);
    const double eps = 1e-12 * std::max(Criterion::scale(parent), 0.0);
    double best_gain = eps;
    for (std::size_t f = 0; f < p.sorted.size(); ++f) {
      const auto& order = p.sorted[f];
      Stats left;
      Stats right = parent;
      for (std::size_t k = 0; k + 1 < n; ++k) {
        const std::uint32_t r = order[k];
        left.add(weights[r], target[r]);
        right.remove(weights[r], target[r]);
        const double a = x(r, f);
        const double b = x(order[k + 1], f);
        if (!(a < b)) continue;
        if (left.n < params.min_leaf || right.n < params.min_leaf) continue;
        const double gain = Criterion::score(left) + Criterion::score(right) - parent_score;
        if (gain > best_gain) {
          double thr = a + (b - a) / 2.0;
          if (!(thr < b)) thr = a;
          best = {true, f, thr, gain};
          best_gain = gain;
        }
      }
    }
    return best;
  }

  template <typename Criterion>
  void grow(const Matrix& x, const SortedColumns& sorted, std::span<const double> target,
            std::span<const double> weights, const TreeParams& params) {
    n_features_ = x.cols();
    nodes_.clear();
    training_leaf_.assign(x.rows(), 0);

    auto make_node = [&](int parent, int depth, const std::vector<std::uint32_t>& rows) {
      TreeNode node;
      node.parent = parent;
      node.depth = depth;
      node.count = rows.size();
      double wsum = 0.0, vsum = 0.0;
      for (std::uint32_t r : rows) {
        wsum += weights[r];
        vsum += weights[r] * target[r];
        node.class_weight[target[r] > 0.5 ? 1 : 0] += weights[r];
      }
      node.weight = wsum;
      node.value = wsum > 0.0 ? vsum / wsum : 0.0;
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size()) - 1;
    };

    Pending root;
    root.sorted.resize(x.cols());
    for (std::size_t f = 0; f < x.cols(); ++f) root.sorted[f] = sorted[f];
    root.node = make_node(-1, 0, root.sorted[0]);

    std::vector<Pending> frontier;
    auto consider = [&](Pending&& p) {
      if (nodes_[p.node].depth < params.max_depth)
        p.split = best_split<Criterion>(x, p, target, weights, params);
      if (p.split.valid) {
        frontier.push_back(std::move(p));
      } else {
        for (std::uint32_t r : p.sorted[0]) training_leaf_[r] = p.node;
      }
    };
    consider(std::move(root));

    std::size_t leaves = 1;
    std::vector<char> goes_left(x.rows(), 0);
    while (!frontier.empty()) {
      if (params.max_leaves > 0 && leaves >= params.max_leaves) break;
      // Highest gain first, earliest node on ties.
      auto it = std::max_element(frontier.begin(), frontier.end(), [](const Pending& a, const Pending& b) {
        if (a.split.gain != b.split.gain) return a.split.gain < b.split.gain;
        return a.node > b.node;
      });
      Pending p = std::move(*it);
      frontier.erase(it);

      const auto& s = p.split;
      for (std::uint32_t r : p.sorted[0]) goes_left[r] = x(r, s.feature) <= s.threshold;
      Pending l, r;
      l.sorted.resize(p.sorted.size());
      r.sorted.resize(p.sorted.size());
      for (std::size_t f = 0; f < p.sorted.size(); ++f) {
        for (std::uint32_t row : p.sorted[f]) (goes_left[row] ? l.sorted[f] : r.sorted[f]).push_back(row);
      }
      const int depth = nodes_[p.node].depth + 1;
      nodes_[p.node].feature = static_cast<int>(s.feature);
      nodes_[p.node].threshold = s.threshold;
      nodes_[p.node].gain = s.gain;
      l.node = make_node(p.node, depth, l.sorted[0]);
      nodes_[p.node].left = l.node;
      r.node = make_node(p.node, depth, r.sorted[0]);
      nodes_[p.node].right = r.node;
      ++leaves;
      consider(std::move(l));
      consider(std::move(r));
    }
    for (const auto& p : frontier)
      for (std::uint32_t r : p.sorted[0]) training_leaf_[r] = p.node;
  }

  std::vector<TreeNode> nodes_;
  std::vector<int> training_leaf_;
  std::size_t n_features_ = 0;
};

}  // namespace xgl
