#pragma once

// Global explanations: a CART surrogate distilled from a black-box model over
// a pool, exposed as its leaves, i.e. mutually exclusive conjunctive rules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xgl/core/error.hpp"
#include "xgl/core/matrix.hpp"
#include "xgl/data/csv.hpp"
#include "xgl/learners/decision_tree.hpp"
#include "xgl/learners/model.hpp"
#include "xgl/metrics.hpp"

namespace xgl {

struct SurrogateParams {
  int max_depth = 6;
  std::size_t min_leaf = 0;   // 0 = max(3, pool / 200)
  std::size_t max_rules = 30;  // 0 = unlimited

  std::size_t effective_min_leaf(std::size_t pool_size) const {
    return min_leaf > 0 ? min_leaf : std::max<std::size_t>(3, pool_size / 200);
  }
  void validate() const {
    require(max_depth >= 1, ErrorCode::invalid_argument, "surrogate: max_depth must be >= 1");
    require(max_rules == 0 || max_rules >= 1, ErrorCode::invalid_argument, "surrogate: max_rules must be >= 1");
  }
};

enum class RuleF1Mode {
  within_coverage,  // 2p / (p + 1), p = precision inside the rule
  one_vs_rest,      // the rule as a global detector of its own label
};

inline RuleF1Mode parse_rule_f1_mode(const std::string& s) {
  if (s == "within_coverage") return RuleF1Mode::within_coverage;
  if (s == "one_vs_rest") return RuleF1Mode::one_vs_rest;
  throw Error(ErrorCode::invalid_argument, "unknown rule F1 mode '" + s + "'");
}

struct Rule {
  int id = 0;
  std::vector<Predicate> predicates;
  Label label = 0;
  std::vector<std::size_t> coverage;  // pool positions satisfying every predicate
  // Diagnostics, filled by score_rules.
  bool scored = false;
  bool eligible = false;
  std::size_t scored_size = 0;
  double precision = std::numeric_limits<double>::quiet_NaN();
  double f1 = std::numeric_limits<double>::quiet_NaN();
  double mistakes = std::numeric_limits<double>::quiet_NaN();

  bool matches(std::span<const double> row) const {
    for (const auto& p : predicates)
      if (!p.holds(row)) return false;
    return true;
  }
};

struct RuleSet {
  std::vector<Rule> rules;
  std::uint64_t model_fingerprint = 0;
  std::uint64_t pool_hash = 0;
  double fidelity = 0.0;
  DecisionTree surrogate;

  std::size_t size() const { return rules.size(); }

  /// Position of the unique rule whose predicates hold for `row`.
  std::size_t rule_index(std::span<const double> row) const {
    for (std::size_t i = 0; i < rules.size(); ++i)
      if (rules[i].matches(row)) return i;
    throw Error(ErrorCode::invalid_argument, "rule set does not cover the row");
  }
};

/// Collapses a root-to-leaf path into at most one upper and one lower bound
/// per feature.
inline std::vector<Predicate> simplify_predicates(std::span<const Predicate> path) {
  std::map<std::size_t, double> upper, lower;
  for (const auto& p : path) {
    if (p.less_equal) {
      auto [it, fresh] = upper.emplace(p.feature, p.threshold);
      if (!fresh) it->second = std::min(it->second, p.threshold);
    } else {
      auto [it, fresh] = lower.emplace(p.feature, p.threshold);
      if (!fresh) it->second = std::max(it->second, p.threshold);
    }
  }
  std::vector<Predicate> out;
  for (const auto& [f, t] : lower) out.push_back({f, false, t});
  for (const auto& [f, t] : upper) out.push_back({f, true, t});
  std::stable_sort(out.begin(), out.end(), [](const Predicate& a, const Predicate& b) { return a.feature < b.feature; });
  return out;
}

inline std::vector<Label> predict_with_rules(const RuleSet& rs, const Matrix& x) {
  std::vector<Label> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = rs.rules[rs.rule_index(x.row(i))].label;
  return out;
}

/// Fits the surrogate on the model's own predictions over the pool.
inline RuleSet distill_labels(std::span<const Label> model_predictions, const Matrix& pool, const SurrogateParams& params,
                              std::uint64_t model_fingerprint = 0) {
  params.validate();
  require(model_predictions.size() == pool.rows(), ErrorCode::dimension_mismatch,
          "distill: prediction/pool length mismatch");
  const std::size_t min_leaf = params.effective_min_leaf(pool.rows());
  require(pool.rows() >= min_leaf && pool.rows() > 0, ErrorCode::invalid_argument,
          "distill: pool smaller than min_leaf");

  const std::vector<double> unit(pool.rows(), 1.0);
  RuleSet rs;
  rs.surrogate = DecisionTree::fit_classifier(pool, model_predictions, unit, {params.max_depth, min_leaf, params.max_rules});
  rs.model_fingerprint = model_fingerprint;
  rs.pool_hash = hash_bytes(pool.data().data(), pool.data().size() * sizeof(double));

  const auto leaves = rs.surrogate.leaves();
  std::vector<int> rule_of_node(rs.surrogate.nodes().size(), -1);
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    Rule r;
    r.id = static_cast<int>(k);
    r.predicates = simplify_predicates(rs.surrogate.path(leaves[k]));
    r.label = rs.surrogate.nodes()[leaves[k]].value > 0.5 ? 1 : 0;
    rule_of_node[leaves[k]] = r.id;
    rs.rules.push_back(std::move(r));
  }
  const auto& leaf_of_row = rs.surrogate.training_leaves();
  for (std::size_t i = 0; i < pool.rows(); ++i) rs.rules[rule_of_node[leaf_of_row[i]]].coverage.push_back(i);

  std::vector<Label> surrogate_pred(pool.rows());
  for (std::size_t i = 0; i < pool.rows(); ++i) surrogate_pred[i] = rs.rules[rule_of_node[leaf_of_row[i]]].label;
  rs.fidelity = macro_f1(surrogate_pred, model_predictions);
  return rs;
}

inline RuleSet distill(const TrainedModel& model, const Matrix& pool, const SurrogateParams& params,
                       std::uint64_t /*seed*/ = 0) {
  return distill_labels(model.predict(pool), pool, params, model.fingerprint());
}

/// Scores every rule against ground truth over the pool rows where `mask` is
/// non-zero (all rows when `mask` is empty). Rules with no scored rows are
/// ineligible.
inline RuleSet score_rules(RuleSet rs, std::span<const Label> pool_truth, RuleF1Mode mode = RuleF1Mode::within_coverage,
                           std::span<const char> mask = {}) {
  require(mask.empty() || mask.size() == pool_truth.size(), ErrorCode::dimension_mismatch,
          "score_rules: mask/truth length mismatch");
  auto in_scope = [&](std::size_t i) { return mask.empty() || mask[i] != 0; };
  std::size_t label_total[2] = {0, 0};
  for (std::size_t i = 0; i < pool_truth.size(); ++i)
    if (in_scope(i)) ++label_total[pool_truth[i]];
  for (auto& r : rs.rules) {
    std::size_t n = 0, correct = 0;
    for (std::size_t i : r.coverage) {
      require(i < pool_truth.size(), ErrorCode::dimension_mismatch, "score_rules: truth shorter than pool");
      if (!in_scope(i)) continue;
      ++n;
      correct += pool_truth[i] == r.label;
    }
    r.scored = true;
    r.scored_size = n;
    r.eligible = n > 0;
    if (n == 0) {
      r.precision = r.f1 = r.mistakes = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const double p = static_cast<double>(correct) / static_cast<double>(n);
    r.precision = p;
    r.mistakes = static_cast<double>(n - correct);
    if (mode == RuleF1Mode::within_coverage) {
      r.f1 = 2.0 * p / (p + 1.0);
    } else {
      const double tp = static_cast<double>(correct);
      const double fp = static_cast<double>(n - correct);
      const double fn = static_cast<double>(label_total[r.label] - correct);
      r.f1 = 2.0 * tp + fp + fn > 0.0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 1.0;
    }
  }
  return rs;
}

// ---------------------------------------------------------------------------
// JSON

inline constexpr int kExplanationSchemaVersion = 1;

inline nlohmann::json nullable(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

inline nlohmann::json to_json(const Rule& r, bool include_diagnostics = true) {
  nlohmann::json preds = nlohmann::json::array();
  for (const auto& p : r.predicates)
    preds.push_back({{"feature", p.feature}, {"op", p.less_equal ? "<=" : ">"}, {"threshold", p.threshold}});
  nlohmann::json j{{"id", r.id}, {"predicates", preds}, {"label", r.label}, {"coverage_size", r.coverage.size()}};
  j["precision"] = include_diagnostics ? nullable(r.precision) : nlohmann::json(nullptr);
  j["f1"] = include_diagnostics ? nullable(r.f1) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const RuleSet& rs, bool include_diagnostics = true) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : rs.rules) rules.push_back(to_json(r, include_diagnostics));
  return {{"v", kExplanationSchemaVersion},
          {"rules", rules},
          {"fidelity", rs.fidelity},
          {"model_fingerprint", rs.model_fingerprint},
          {"pool_hash", rs.pool_hash}};
}

/// Human-readable rule text: one predicate per line, predicted class last.
inline std::string describe(const Rule& r, std::span<const std::string> feature_names = {}) {
  std::string out;
  for (const auto& p : r.predicates) {
    const std::string name = p.feature < feature_names.size() ? feature_names[p.feature] : "x" + std::to_string(p.feature);
    out += name + (p.less_equal ? " <= " : " > ") + format_exact(p.threshold) + "\n";
  }
  return out + "=> " + std::to_string(r.label);
}

}  // namespace xgl
