#pragma once

// Interactive learning protocols: one query per iteration over the unlabeled
// part of a fold's training pool.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xgl/core/error.hpp"
#include "xgl/core/matrix.hpp"
#include "xgl/core/rng.hpp"
#include "xgl/data/dataset.hpp"
#include "xgl/explain.hpp"
#include "xgl/learners/model.hpp"
#include "xgl/metrics.hpp"

namespace xgl {

enum class Strategy { random, al_unc, al_repr, gl, xgl, xgl_uniform, passive };

inline constexpr Strategy kAllStrategies[] = {Strategy::random, Strategy::al_unc, Strategy::al_repr, Strategy::gl,
                                              Strategy::xgl,    Strategy::xgl_uniform, Strategy::passive};

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::al_unc: return "al_unc";
    case Strategy::al_repr: return "al_repr";
    case Strategy::gl: return "gl";
    case Strategy::xgl: return "xgl";
    case Strategy::xgl_uniform: return "xgl_uniform";
    case Strategy::passive: return "passive";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  for (Strategy k : kAllStrategies)
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::invalid_argument, "unknown strategy '" + s + "'");
}

/// Position in the canonical strategy order (used to sort tables).
inline int strategy_rank(Strategy s) { return static_cast<int>(s); }

enum class ScoringScope { whole_pool, unlabeled_only };

struct SupervisorSim {
  double theta = 100.0;
  std::vector<Label> truth;  // ground truth per pool position
  RuleF1Mode f1_mode = RuleF1Mode::within_coverage;
  ScoringScope scope = ScoringScope::whole_pool;

  void validate() const {
    require(std::isfinite(theta) && theta >= 0.0, ErrorCode::invalid_argument,
            "supervisor: theta must be finite and >= 0");
  }
};

/// Labeled / unlabeled bookkeeping over pool positions 0..P-1.
class PoolPartition {
 public:
  PoolPartition() = default;
  PoolPartition(std::size_t pool_size, std::span<const std::size_t> labeled) : is_labeled_(pool_size, 0) {
    for (std::size_t p : labeled) {
      require(p < pool_size, ErrorCode::invalid_argument, "pool: labeled position out of range");
      require(!is_labeled_[p], ErrorCode::invalid_argument, "pool: duplicate labeled position");
      is_labeled_[p] = 1;
      labeled_.push_back(p);
    }
    for (std::size_t p = 0; p < pool_size; ++p)
      if (!is_labeled_[p]) unlabeled_.push_back(p);
  }

  const std::vector<std::size_t>& labeled() const { return labeled_; }
  /// Ascending order.
  const std::vector<std::size_t>& unlabeled() const { return unlabeled_; }
  const std::vector<char>& labeled_mask() const { return is_labeled_; }
  bool is_labeled(std::size_t p) const { return is_labeled_.at(p) != 0; }
  std::size_t size() const { return is_labeled_.size(); }

  void reveal(std::size_t p) {
    require(p < is_labeled_.size() && !is_labeled_[p], ErrorCode::conflict, "pool: position already labeled");
    is_labeled_[p] = 1;
    labeled_.push_back(p);
    unlabeled_.erase(std::lower_bound(unlabeled_.begin(), unlabeled_.end(), p));
  }

 private:
  std::vector<char> is_labeled_;
  std::vector<std::size_t> labeled_;
  std::vector<std::size_t> unlabeled_;
};

// ---------------------------------------------------------------------------
// Selectors. All return a pool position from `unlabeled`.

inline std::size_t select_random(std::span<const std::size_t> unlabeled, Rng& rng) {
  require(!unlabeled.empty(), ErrorCode::invalid_argument, "select_random: empty pool");
  return unlabeled[rng.index(unlabeled.size())];
}

/// argmin |p1 - p0|; `probs` is indexed by pool position. Lowest position wins ties.
inline std::size_t select_uncertain(std::span<const std::size_t> unlabeled, std::span<const ClassProbabilities> probs) {
  require(!unlabeled.empty(), ErrorCode::invalid_argument, "select_uncertain: empty pool");
  std::size_t best = unlabeled[0];
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t p : unlabeled) {
    const double gap = std::abs(probs[p].p1 - probs[p].p0);
    if (gap < best_gap || (gap == best_gap && p < best)) {
      best_gap = gap;
      best = p;
    }
  }
  return best;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Dense pool-by-pool cosine similarities, computed once per run.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  explicit SimilarityMatrix(const Matrix& pool) : n_(pool.rows()), s_(n_ * n_) {
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) s_[i * n_ + j] = cosine_similarity(pool.row(i), pool.row(j));
  }
  double operator()(std::size_t i, std::size_t j) const { return s_[i * n_ + j]; }
  std::size_t size() const { return n_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> s_;
};

/// Sign-preserving power with x^0 = 1.
inline double signed_pow(double x, double beta) {
  if (beta == 0.0) return 1.0;
  if (beta == 1.0) return x;
  return std::copysign(std::pow(std::abs(x), beta), x);
}

/// argmax (1 - max_c p_c) * (mean cosine similarity to the unlabeled pool)^beta.
inline std::size_t select_representative(std::span<const std::size_t> unlabeled,
                                         std::span<const ClassProbabilities> probs, const SimilarityMatrix& sim,
                                         double beta) {
  require(!unlabeled.empty(), ErrorCode::invalid_argument, "select_representative: empty pool");
  std::size_t best = unlabeled[0];
  double best_score = -std::numeric_limits<double>::infinity();
  const double u_count = static_cast<double>(unlabeled.size());
  for (std::size_t p : unlabeled) {
    const double u = 1.0 - std::max(probs[p].p0, probs[p].p1);
    double density = 0.0;
    for (std::size_t q : unlabeled) density += sim(p, q);
    density /= u_count;
    const double score = u * signed_pow(density, beta);
    if (score > best_score) {
      best_score = score;
      best = p;
    }
  }
  return best;
}

/// Uniform unlabeled instance of the target class, or uniform over all
/// unlabeled instances when that class is exhausted.
inline std::size_t select_guided(std::span<const std::size_t> unlabeled, std::span<const Label> truth, Label target,
                                 Rng& rng, bool* fell_back = nullptr) {
  require(!unlabeled.empty(), ErrorCode::invalid_argument, "select_guided: empty pool");
  std::vector<std::size_t> candidates;
  for (std::size_t p : unlabeled)
    if (truth[p] == target) candidates.push_back(p);
  if (fell_back) *fell_back = candidates.empty();
  if (candidates.empty()) return select_random(unlabeled, rng);
  return candidates[rng.index(candidates.size())];
}

struct XglChoice {
  std::size_t position = 0;
  int rule_id = -1;          // rule the mistake came from; -1 for the random fallback
  int first_rule = -1;       // first rule drawn
  bool first_rule_minimal = false;  // first draw had the lowest F1 among eligible rules
  std::size_t eligible_rules = 0;
  std::size_t draws = 0;
};

/// Rules whose coverage intersects the unlabeled pool and that have a score.
inline std::vector<std::size_t> eligible_rules(const RuleSet& rs, const std::vector<char>& labeled_mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rs.rules.size(); ++i) {
    const auto& r = rs.rules[i];
    if (!r.eligible || std::isnan(r.f1)) continue;
    if (std::any_of(r.coverage.begin(), r.coverage.end(), [&](std::size_t p) { return !labeled_mask[p]; }))
      out.push_back(i);
  }
  return out;
}

/// Softmax probabilities exp(theta m_i) / sum_j exp(theta m_j), m = 1 - F1.
inline std::vector<double> rule_choice_probabilities(std::span<const double> m, double theta) {
  std::vector<double> w(m.size());
  if (m.empty()) return w;
  const double top = *std::max_element(m.begin(), m.end());
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) total += w[i] = std::exp(theta * (m[i] - top));
  for (double& v : w) v /= total;
  return w;
}

/// The simulated supervisor: pick a rule by attention-weighted badness, then a
/// random counter-example inside it; retry other rules when the pick has none.
inline XglChoice select_xgl(const RuleSet& rs, const PoolPartition& pool, const SupervisorSim& sim, Rng& rng,
                            bool uniform_rules = false) {
  const auto& unlabeled = pool.unlabeled();
  require(!unlabeled.empty(), ErrorCode::invalid_argument, "select_xgl: empty pool");
  require(sim.truth.size() == pool.size(), ErrorCode::dimension_mismatch, "select_xgl: truth/pool size mismatch");
  XglChoice choice;
  std::vector<std::size_t> candidates = eligible_rules(rs, pool.labeled_mask());
  choice.eligible_rules = candidates.size();
  double worst_f1 = std::numeric_limits<double>::infinity();
  for (std::size_t i : candidates) worst_f1 = std::min(worst_f1, rs.rules[i].f1);

  while (!candidates.empty()) {
    std::size_t pick;
    if (uniform_rules) {
      pick = rng.index(candidates.size());
    } else {
      std::vector<double> m;
      for (std::size_t i : candidates) m.push_back(1.0 - rs.rules[i].f1);
      pick = rng.categorical(rule_choice_probabilities(m, sim.theta));
    }
    const Rule& rule = rs.rules[candidates[pick]];
    if (choice.draws++ == 0) {
      choice.first_rule = rule.id;
      choice.first_rule_minimal = rule.f1 <= worst_f1 + 1e-12;
    }
    std::vector<std::size_t> mistakes;
    for (std::size_t p : rule.coverage)
      if (!pool.is_labeled(p) && sim.truth[p] != rule.label) mistakes.push_back(p);
    if (!mistakes.empty()) {
      choice.position = mistakes[rng.index(mistakes.size())];
      choice.rule_id = rule.id;
      return choice;
    }
    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  choice.position = select_random(unlabeled, rng);
  choice.rule_id = -1;
  return choice;
}

// ---------------------------------------------------------------------------
// The interaction loop

struct LoopOptions {
  SurrogateParams surrogate;
  double beta = 1.0;
  bool archive_models = false;
  bool distill_every_iteration = false;  // also for strategies that do not need it
};

struct IterationTrace {
  int iteration = 0;
  double test_macro_f1 = 0.0;
  double test_risk = 0.0;
  double fidelity = std::numeric_limits<double>::quiet_NaN();
  std::size_t rule_count = 0;
  std::size_t eligible_rules = 0;
  int first_rule_minimal = -1;  // -1 when no rule was drawn
  bool fallback = false;
};

struct LoopState {
  PoolPartition pool;
  int iteration = 0;
  std::optional<TrainedModel> model;
  std::optional<RuleSet> ruleset;
  std::vector<QueryRecord> query_log;
};

struct LoopResult {
  LoopState state;
  std::optional<TrainedModel> final_model;
  std::vector<IterationTrace> trace;
  std::vector<TrainedModel> archived_models;  // model live at each iteration, when requested
  bool exhausted = false;
  double final_test_macro_f1 = 0.0;
};

/// Rows of the fold's training pool indexed by pool position.
struct FoldView {
  Matrix pool_x;
  std::vector<Label> pool_truth;
  std::vector<double> pool_weights;
  Matrix test_x;
  std::vector<Label> test_truth;
  std::vector<std::size_t> pool_rows;  // dataset row id per pool position
  std::vector<std::size_t> initial_positions;

  FoldView(const Dataset& d, const FoldSplit& fold)
      : pool_x(d.features.select_rows(fold.train_indices)),
        pool_truth(gather<Label>(d.labels, fold.train_indices)),
        pool_weights(gather<double>(d.weights, fold.train_indices)),
        test_x(d.features.select_rows(fold.test_indices)),
        test_truth(gather<Label>(d.labels, fold.test_indices)),
        pool_rows(fold.train_indices) {
    for (std::size_t r : fold.initial_labeled) {
      const auto it = std::lower_bound(pool_rows.begin(), pool_rows.end(), r);
      require(it != pool_rows.end() && *it == r, ErrorCode::invalid_argument,
              "fold: initial labeled row not in the training pool");
      initial_positions.push_back(static_cast<std::size_t>(it - pool_rows.begin()));
    }
  }
};

inline TrainedModel fit_on_positions(const ModelSpec& spec, const FoldView& v, std::span<const std::size_t> positions,
                                     std::uint64_t seed) {
  std::vector<std::size_t> sorted(positions.begin(), positions.end());
  std::sort(sorted.begin(), sorted.end());
  const Matrix x = v.pool_x.select_rows(sorted);
  const auto y = gather<Label>(v.pool_truth, sorted);
  const auto w = gather<double>(v.pool_weights, sorted);
  return fit(spec, x, y, w, seed);
}

/// The rarer class in the pool's ground truth (class 1 on ties).
inline Label rarer_class(std::span<const Label> truth) {
  const auto pos = std::count(truth.begin(), truth.end(), 1);
  return pos <= static_cast<std::ptrdiff_t>(truth.size()) - pos ? 1 : 0;
}

inline LoopResult run_loop(const Dataset& d, const FoldSplit& fold, Strategy strategy, const ModelSpec& spec,
                           std::size_t budget, double theta, std::uint64_t seed, const LoopOptions& options = {},
                           RuleF1Mode f1_mode = RuleF1Mode::within_coverage,
                           ScoringScope scope = ScoringScope::whole_pool) {
  require(budget >= 1, ErrorCode::invalid_argument, "run_loop: budget must be >= 1");
  require(strategy != Strategy::passive, ErrorCode::invalid_argument, "run_loop: passive has no loop");
  spec.validate();
  const FoldView view(d, fold);
  SupervisorSim sim{theta, view.pool_truth, f1_mode, scope};
  sim.validate();

  LoopResult result;
  LoopState& state = result.state;
  state.pool = PoolPartition(view.pool_x.rows(), view.initial_positions);
  Rng rng(derive_seed(seed, "select", to_string(strategy)));
  SimilarityMatrix similarity;
  if (strategy == Strategy::al_repr) similarity = SimilarityMatrix(view.pool_x);
  const Label first_target = rarer_class(view.pool_truth);
  const bool needs_rules = strategy == Strategy::xgl || strategy == Strategy::xgl_uniform;

  for (std::size_t t = 1; t <= budget; ++t) {
    if (state.pool.unlabeled().empty()) {
      result.exhausted = true;
      break;
    }
    state.model.emplace(fit_on_positions(spec, view, state.pool.labeled(), derive_seed(seed, "fit", t)));
    const TrainedModel& h = *state.model;
    if (options.archive_models) result.archived_models.push_back(h);

    IterationTrace tr;
    tr.iteration = static_cast<int>(t);
    const auto test_pred = h.predict(view.test_x);
    tr.test_macro_f1 = macro_f1(test_pred, view.test_truth);
    tr.test_risk = zero_one_risk(test_pred, view.test_truth);

    std::vector<ClassProbabilities> probs;
    if (strategy == Strategy::al_unc || strategy == Strategy::al_repr) probs = h.predict_proba(view.pool_x);
    if (needs_rules || options.distill_every_iteration) {
      RuleSet rs = distill(h, view.pool_x, options.surrogate);
      std::vector<char> mask;
      if (scope == ScoringScope::unlabeled_only) {
        mask = state.pool.labeled_mask();
        for (char& c : mask) c = !c;
      }
      state.ruleset = score_rules(std::move(rs), sim.truth, f1_mode, mask);
      tr.fidelity = state.ruleset->fidelity;
      tr.rule_count = state.ruleset->size();
    }

    std::size_t pick = 0;
    int rule_id = -1;
    const auto& unlabeled = state.pool.unlabeled();
    switch (strategy) {
      case Strategy::random: pick = select_random(unlabeled, rng); break;
      case Strategy::al_unc: pick = select_uncertain(unlabeled, probs); break;
      case Strategy::al_repr: pick = select_representative(unlabeled, probs, similarity, options.beta); break;
      case Strategy::gl: {
        const Label target = (t % 2 == 1) ? first_target : 1 - first_target;
        pick = select_guided(unlabeled, sim.truth, target, rng, &tr.fallback);
        break;
      }
      case Strategy::xgl:
      case Strategy::xgl_uniform: {
        const auto c = select_xgl(*state.ruleset, state.pool, sim, rng, strategy == Strategy::xgl_uniform);
        pick = c.position;
        rule_id = c.rule_id;
        tr.eligible_rules = c.eligible_rules;
        tr.first_rule_minimal = c.draws > 0 ? static_cast<int>(c.first_rule_minimal) : -1;
        tr.fallback = c.rule_id < 0;
        break;
      }
      case Strategy::passive: break;
    }

    // The prediction is recorded before the label is revealed.
    const Label predicted = h.probabilities(view.pool_x.row(pick)).argmax();
    state.query_log.push_back({static_cast<int>(t), view.pool_rows[pick], predicted, sim.truth[pick], rule_id});
    state.pool.reveal(pick);
    state.iteration = static_cast<int>(t);
    result.trace.push_back(tr);
  }

  result.final_model.emplace(fit_on_positions(spec, view, state.pool.labeled(), derive_seed(seed, "fit", "final")));
  result.final_test_macro_f1 = macro_f1(result.final_model->predict(view.test_x), view.test_truth);
  return result;
}

/// Per-iteration metrics of a finished loop.
inline MetricSeries loop_metrics(const LoopResult& r, std::size_t window = 5) {
  std::vector<double> f1, risk;
  for (const auto& t : r.trace) {
    f1.push_back(t.test_macro_f1);
    risk.push_back(t.test_risk);
  }
  return build_series(r.state.query_log, f1, risk, window);
}

inline void write_query_log_csv(std::ostream& out, std::span<const QueryRecord> log, Strategy strategy) {
  out << "iteration,instance_id,strategy,predicted_label,true_label,rule_id\n";
  for (const auto& q : log)
    out << q.iteration << ',' << q.instance << ',' << to_string(strategy) << ',' << q.predicted << ',' << q.truth
        << ',' << q.rule_id << '\n';
}

}  // namespace xgl
