#pragma once

// Uniform front end over the base classifiers: spec validation, fitting,
// labels / margins / probabilities and versioned JSON serialization.

#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "xgl/core/error.hpp"
#include "xgl/core/matrix.hpp"
#include "xgl/core/rng.hpp"
#include "xgl/learners/decision_tree.hpp"
#include "xgl/learners/gbt.hpp"
#include "xgl/learners/svm.hpp"

namespace xgl {

enum class ModelKind { rbf_svm, gradient_boosted_trees, decision_tree };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::rbf_svm: return "rbf_svm";
    case ModelKind::gradient_boosted_trees: return "gradient_boosted_trees";
    case ModelKind::decision_tree: return "decision_tree";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "rbf_svm" || s == "svm") return ModelKind::rbf_svm;
  if (s == "gradient_boosted_trees" || s == "gbt") return ModelKind::gradient_boosted_trees;
  if (s == "decision_tree" || s == "tree") return ModelKind::decision_tree;
  throw Error(ErrorCode::invalid_argument, "unknown model kind '" + s + "'");
}

struct ModelSpec {
  ModelKind kind = ModelKind::gradient_boosted_trees;
  std::map<std::string, double> hyperparameters;

  static ModelSpec rbf_svm(double gamma, double C) { return {ModelKind::rbf_svm, {{"gamma", gamma}, {"C", C}}}; }
  static ModelSpec gbt(int rounds = 100, int depth = 3, double learning_rate = 0.1) {
    return {ModelKind::gradient_boosted_trees,
            {{"rounds", rounds}, {"depth", depth}, {"learning_rate", learning_rate}}};
  }
  static ModelSpec tree(int max_depth, int min_leaf = 1) {
    return {ModelKind::decision_tree, {{"max_depth", max_depth}, {"min_leaf", min_leaf}}};
  }

  double get(const std::string& key, double fallback) const {
    const auto it = hyperparameters.find(key);
    return it == hyperparameters.end() ? fallback : it->second;
  }

  void validate() const {
    auto positive = [&](const char* key, double fallback) {
      require(get(key, fallback) > 0.0, ErrorCode::invalid_argument,
              to_string(kind) + ": " + key + " must be positive");
    };
    auto at_least_one = [&](const char* key, double fallback) {
      require(get(key, fallback) >= 1.0, ErrorCode::invalid_argument, to_string(kind) + ": " + key + " must be >= 1");
    };
    auto only = [&](std::initializer_list<const char*> keys) {
      for (const auto& [k, v] : hyperparameters) {
        const bool known = std::any_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; });
        require(known, ErrorCode::invalid_argument, to_string(kind) + ": unknown hyperparameter '" + k + "'");
      }
    };
    switch (kind) {
      case ModelKind::rbf_svm:
        only({"gamma", "C", "tolerance"});
        positive("tolerance", 1e-3);
        positive("gamma", 1.0);
        positive("C", 1.0);
        break;
      case ModelKind::gradient_boosted_trees:
        only({"rounds", "depth", "learning_rate", "min_leaf"});
        at_least_one("min_leaf", 1);
        at_least_one("rounds", 100);
        at_least_one("depth", 3);
        positive("learning_rate", 0.1);
        break;
      case ModelKind::decision_tree:
        only({"max_depth", "min_leaf"});
        at_least_one("max_depth", 6);
        at_least_one("min_leaf", 1);
        break;
    }
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline nlohmann::json to_json(const ModelSpec& s) {
  nlohmann::json j{{"kind", to_string(s.kind)}};
  for (const auto& [k, v] : s.hyperparameters) j[k] = v;
  return j;
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  require(j.is_object() && j.contains("kind") && j["kind"].is_string(), ErrorCode::invalid_argument,
          "model spec needs a string 'kind'");
  ModelSpec s{parse_model_kind(j["kind"].get<std::string>()), {}};
  const nlohmann::json& params = j.contains("hyperparameters") ? j["hyperparameters"] : j;
  for (const auto& [k, v] : params.items()) {
    if (k == "kind") continue;
    require(v.is_number(), ErrorCode::invalid_argument, "hyperparameter '" + k + "' must be numeric");
    s.hyperparameters[k] = v.get<double>();
  }
  s.validate();
  return s;
}

struct ClassProbabilities {
  double p0 = 0.5;
  double p1 = 0.5;
  Label argmax() const { return p1 > p0 ? 1 : 0; }
};

inline ClassProbabilities probabilities_from_p1(double p1) { return {1.0 - p1, p1}; }

inline std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(std::string_view(static_cast<const char*>(data), n), h);
}

inline std::uint64_t training_hash(const Matrix& x, std::span<const Label> labels, std::span<const double> weights) {
  std::uint64_t h = hash_bytes(x.data().data(), x.data().size() * sizeof(double));
  h = hash_bytes(labels.data(), labels.size() * sizeof(Label), h);
  return hash_bytes(weights.data(), weights.size() * sizeof(double), h);
}

class TrainedModel {
 public:
  using Impl = std::variant<RbfSvm, GradientBoostedTrees, DecisionTree>;

  TrainedModel(ModelSpec spec, Impl impl, std::size_t n_features, std::uint64_t dataset_hash, std::uint64_t seed,
               bool converged)
      : spec_(std::move(spec)),
        impl_(std::move(impl)),
        n_features_(n_features),
        dataset_hash_(dataset_hash),
        seed_(seed),
        converged_(converged) {}

  const ModelSpec& spec() const { return spec_; }
  const Impl& impl() const { return impl_; }
  std::size_t n_features() const { return n_features_; }
  std::uint64_t dataset_hash() const { return dataset_hash_; }
  std::uint64_t seed() const { return seed_; }
  /// False when the solver hit its iteration cap (best iterate returned).
  bool converged() const { return converged_; }

  /// Signed score per row: SVM decision value, boosting log-odds,
  /// tree leaf probability minus 1/2.
  double margin(std::span<const double> row) const {
    require(row.size() == n_features_, ErrorCode::dimension_mismatch, "predict: feature count mismatch");
    return std::visit(
        [&](const auto& m) -> double {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, RbfSvm>) return m.decision(row);
          else if constexpr (std::is_same_v<T, GradientBoostedTrees>) return m.score(row);
          else return m.value(row) - 0.5;
        },
        impl_);
  }

  ClassProbabilities probabilities(std::span<const double> row) const {
    if (const auto* tree = std::get_if<DecisionTree>(&impl_)) {
      require(row.size() == n_features_, ErrorCode::dimension_mismatch, "predict: feature count mismatch");
      return probabilities_from_p1(tree->value(row));
    }
    return probabilities_from_p1(sigmoid(margin(row)));
  }

  std::vector<double> margins(const Matrix& x) const {
    check_width(x);
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = margin(x.row(i));
    return out;
  }

  std::vector<ClassProbabilities> predict_proba(const Matrix& x) const {
    check_width(x);
    std::vector<ClassProbabilities> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = probabilities(x.row(i));
    return out;
  }

  std::vector<Label> predict(const Matrix& x) const {
    check_width(x);
    std::vector<Label> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = probabilities(x.row(i)).argmax();
    return out;
  }

  nlohmann::json to_json() const;
  static TrainedModel from_json(const nlohmann::json& j);

  /// Hash of the fitted parameters.
  std::uint64_t fingerprint() const {
    std::uint64_t h = hash_bytes(&n_features_, sizeof n_features_);
    auto mix_tree = [&h](const DecisionTree& t) {
      for (const auto& n : t.nodes()) {
        h = hash_bytes(&n.feature, sizeof n.feature, h);
        h = hash_bytes(&n.threshold, sizeof n.threshold, h);
        h = hash_bytes(&n.value, sizeof n.value, h);
      }
    };
    std::visit(
        [&](const auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, RbfSvm>) {
            const double head[2] = {m.gamma(), m.rho()};
            h = hash_bytes(head, sizeof head, h);
            h = hash_bytes(m.coefficients().data(), m.coefficients().size() * sizeof(double), h);
            h = hash_bytes(m.support_vectors().data().data(), m.support_vectors().data().size() * sizeof(double), h);
          } else if constexpr (std::is_same_v<T, GradientBoostedTrees>) {
            const double head[2] = {m.init_score(), m.learning_rate()};
            h = hash_bytes(head, sizeof head, h);
            for (const auto& t : m.trees()) mix_tree(t);
          } else {
            mix_tree(m);
          }
        },
        impl_);
    return h;
  }

 private:
  void check_width(const Matrix& x) const {
    require(x.rows() == 0 || x.cols() == n_features_, ErrorCode::dimension_mismatch,
            "predict: feature count mismatch");
  }

  ModelSpec spec_;
  Impl impl_;
  std::size_t n_features_ = 0;
  std::uint64_t dataset_hash_ = 0;
  std::uint64_t seed_ = 0;
  bool converged_ = true;
};

inline TrainedModel fit(const ModelSpec& spec, const Matrix& x, std::span<const Label> labels,
                        std::span<const double> weights, std::uint64_t seed) {
  spec.validate();
  require(x.rows() == labels.size() && x.rows() == weights.size(), ErrorCode::dimension_mismatch,
          "fit: features, labels and weights differ in length");
  bool has[2] = {false, false};
  for (Label l : labels) {
    require(l == 0 || l == 1, ErrorCode::invalid_argument, "fit: labels must be 0 or 1");
    has[l] = true;
  }
  require(has[0] && has[1], ErrorCode::invalid_argument, "fit: need at least one example of each class");
  for (double w : weights) require(w > 0.0, ErrorCode::invalid_argument, "fit: weights must be positive");

  const std::uint64_t hash = training_hash(x, labels, weights);
  switch (spec.kind) {
    case ModelKind::rbf_svm: {
      SvmParams p;
      p.gamma = spec.get("gamma", 1.0);
      p.C = spec.get("C", 1.0);
      p.tolerance = spec.get("tolerance", 1e-3);
      auto m = RbfSvm::fit(x, labels, weights, p);
      const bool ok = m.converged();
      return TrainedModel(spec, std::move(m), x.cols(), hash, seed, ok);
    }
    case ModelKind::gradient_boosted_trees: {
      GbtParams p;
      p.rounds = static_cast<int>(spec.get("rounds", 100));
      p.depth = static_cast<int>(spec.get("depth", 3));
      p.learning_rate = spec.get("learning_rate", 0.1);
      p.min_leaf = static_cast<std::size_t>(spec.get("min_leaf", 1));
      return TrainedModel(spec, GradientBoostedTrees::fit(x, labels, weights, p), x.cols(), hash, seed, true);
    }
    case ModelKind::decision_tree: {
      TreeParams p;
      p.max_depth = static_cast<int>(spec.get("max_depth", 6));
      p.min_leaf = static_cast<std::size_t>(spec.get("min_leaf", 1));
      return TrainedModel(spec, DecisionTree::fit_classifier(x, labels, weights, p), x.cols(), hash, seed, true);
    }
  }
  throw Error(ErrorCode::invalid_argument, "fit: unknown model kind");
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kModelSchemaVersion = 1;

inline nlohmann::json tree_to_json(const DecisionTree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : t.nodes()) {
    nodes.push_back({{"feature", n.feature},
                     {"threshold", n.threshold},
                     {"left", n.left},
                     {"right", n.right},
                     {"parent", n.parent},
                     {"depth", n.depth},
                     {"count", n.count},
                     {"weight", n.weight},
                     {"w0", n.class_weight[0]},
                     {"w1", n.class_weight[1]},
                     {"value", n.value},
                     {"gain", n.gain}});
  }
  return {{"n_features", t.n_features()}, {"nodes", nodes}};
}

inline DecisionTree tree_from_json(const nlohmann::json& j) {
  std::vector<TreeNode> nodes;
  for (const auto& jn : j.at("nodes")) {
    TreeNode n;
    n.feature = jn.at("feature").get<int>();
    n.threshold = jn.at("threshold").get<double>();
    n.left = jn.at("left").get<int>();
    n.right = jn.at("right").get<int>();
    n.parent = jn.at("parent").get<int>();
    n.depth = jn.at("depth").get<int>();
    n.count = jn.at("count").get<std::size_t>();
    n.weight = jn.at("weight").get<double>();
    n.class_weight[0] = jn.at("w0").get<double>();
    n.class_weight[1] = jn.at("w1").get<double>();
    n.value = jn.at("value").get<double>();
    n.gain = jn.at("gain").get<double>();
    nodes.push_back(n);
  }
  return DecisionTree::from_nodes(std::move(nodes), j.at("n_features").get<std::size_t>());
}

inline nlohmann::json TrainedModel::to_json() const {
  nlohmann::json j{{"v", kModelSchemaVersion},
                   {"spec", xgl::to_json(spec_)},
                   {"n_features", n_features_},
                   {"dataset_hash", dataset_hash_},
                   {"seed", seed_},
                   {"converged", converged_}};
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, RbfSvm>) {
          j["svm"] = {{"gamma", m.gamma()},
                      {"rho", m.rho()},
                      {"coef", m.coefficients()},
                      {"rows", m.support_vectors().rows()},
                      {"support", m.support_vectors().data()}};
        } else if constexpr (std::is_same_v<T, GradientBoostedTrees>) {
          nlohmann::json trees = nlohmann::json::array();
          for (const auto& t : m.trees()) trees.push_back(tree_to_json(t));
          j["gbt"] = {{"init_score", m.init_score()}, {"learning_rate", m.learning_rate()}, {"trees", trees}};
        } else {
          j["tree"] = tree_to_json(m);
        }
      },
      impl_);
  return j;
}

inline TrainedModel TrainedModel::from_json(const nlohmann::json& j) {
  try {
    require(j.at("v").get<int>() == kModelSchemaVersion, ErrorCode::parse_error, "model JSON: unsupported version");
    const ModelSpec spec = model_spec_from_json(j.at("spec"));
    const auto n_features = j.at("n_features").get<std::size_t>();
    const auto hash = j.at("dataset_hash").get<std::uint64_t>();
    const auto seed = j.at("seed").get<std::uint64_t>();
    const bool converged = j.at("converged").get<bool>();
    if (j.contains("svm")) {
      const auto& s = j["svm"];
      Matrix sv(s.at("rows").get<std::size_t>(), n_features, s.at("support").get<std::vector<double>>());
      auto m = RbfSvm::from_parts(std::move(sv), s.at("coef").get<std::vector<double>>(), s.at("rho").get<double>(),
                                  s.at("gamma").get<double>());
      return TrainedModel(spec, std::move(m), n_features, hash, seed, converged);
    }
    if (j.contains("gbt")) {
      const auto& g = j["gbt"];
      std::vector<DecisionTree> trees;
      for (const auto& t : g.at("trees")) trees.push_back(tree_from_json(t));
      auto m = GradientBoostedTrees::from_parts(g.at("init_score").get<double>(), g.at("learning_rate").get<double>(),
                                                std::move(trees));
      return TrainedModel(spec, std::move(m), n_features, hash, seed, converged);
    }
    return TrainedModel(spec, tree_from_json(j.at("tree")), n_features, hash, seed, converged);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("model JSON: ") + e.what());
  }
}

}  // namespace xgl
