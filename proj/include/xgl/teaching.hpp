#pragma once

// Interactive machine teaching over finite hypothesis classes: the
// weight-doubling teaching oracle, brute-force minimal teaching sets, and the
// explainer-projection pipeline that teaches a hypothesis through its
// explanation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "xgl/core/error.hpp"
#include "xgl/core/rng.hpp"
#include "xgl/learners/model.hpp"

namespace xgl {

struct FiniteClass {
  std::size_t n_instances = 0;
  std::vector<std::vector<Label>> hypotheses;
  std::vector<std::string> names;

  std::size_t size() const { return hypotheses.size(); }

  void validate() const {
    require(n_instances > 0, ErrorCode::invalid_argument, "finite class: no instances");
    require(!hypotheses.empty(), ErrorCode::invalid_argument, "finite class: no hypotheses");
    for (const auto& h : hypotheses)
      require(h.size() == n_instances, ErrorCode::dimension_mismatch, "finite class: label vector length mismatch");
    std::set<std::vector<Label>> seen(hypotheses.begin(), hypotheses.end());
    require(seen.size() == hypotheses.size(), ErrorCode::invalid_argument, "finite class: duplicate hypotheses");
  }

  std::size_t disagreement(std::size_t a, std::size_t b) const {
    std::size_t n = 0;
    for (std::size_t x = 0; x < n_instances; ++x) n += hypotheses[a][x] != hypotheses[b][x];
    return n;
  }
};

/// Thresholds on X = {0..n-1}: hypothesis k labels x positive iff x >= k,
/// for k = 0..n.
inline FiniteClass threshold_class(std::size_t n) {
  require(n >= 1, ErrorCode::invalid_argument, "threshold_class: need n >= 1");
  FiniteClass fc;
  fc.n_instances = n;
  for (std::size_t k = 0; k <= n; ++k) {
    std::vector<Label> h(n);
    for (std::size_t x = 0; x < n; ++x) h[x] = x >= k ? 1 : 0;
    fc.hypotheses.push_back(std::move(h));
    fc.names.push_back("x>=" + std::to_string(k));
  }
  return fc;
}

/// log2(2|X|), the per-instance doubling cap.
inline double doubling_cap(std::size_t n_instances) { return std::log2(2.0 * static_cast<double>(n_instances)); }

/// Smallest T (lexicographically first among equal sizes) on which the target
/// is the only hypothesis agreeing with the target's labels.
inline std::vector<std::size_t> minimal_teaching_set(const FiniteClass& fc, std::size_t target) {
  fc.validate();
  require(target < fc.size(), ErrorCode::invalid_argument, "minimal_teaching_set: target out of range");
  const std::size_t n = fc.n_instances;
  std::vector<std::vector<std::size_t>> differ;  // instances distinguishing each rival
  for (std::size_t g = 0; g < fc.size(); ++g) {
    if (g == target) continue;
    std::vector<std::size_t> d;
    for (std::size_t x = 0; x < n; ++x)
      if (fc.hypotheses[g][x] != fc.hypotheses[target][x]) d.push_back(x);
    differ.push_back(std::move(d));
  }
  std::vector<char> chosen(n, 0);
  auto hits_all = [&]() {
    for (const auto& d : differ)
      if (std::none_of(d.begin(), d.end(), [&](std::size_t x) { return chosen[x] != 0; })) return false;
    return true;
  };
  for (std::size_t size = 0; size <= n; ++size) {
    std::vector<std::size_t> comb(size);
    for (std::size_t i = 0; i < size; ++i) comb[i] = i;
    for (;;) {
      std::fill(chosen.begin(), chosen.end(), 0);
      for (std::size_t x : comb) chosen[x] = 1;
      if (hits_all()) return comb;
      // Next combination in lexicographic order.
      std::size_t i = size;
      while (i > 0 && comb[i - 1] == n - size + i - 1) --i;
      if (i == 0) break;
      ++comb[i - 1];
      for (std::size_t j = i; j < size; ++j) comb[j] = comb[j - 1] + 1;
    }
  }
  throw Error(ErrorCode::invalid_argument, "minimal_teaching_set: no teaching set exists");
}

struct LabeledInstance {
  std::size_t x = 0;
  Label y = 0;
};

enum class LearnerPolicy { first_consistent, last_consistent };

using ConsistentLearner = std::function<std::size_t(const FiniteClass&, const std::vector<LabeledInstance>&)>;

inline bool consistent_with(const FiniteClass& fc, std::size_t g, const std::vector<LabeledInstance>& s) {
  return std::all_of(s.begin(), s.end(), [&](const LabeledInstance& e) { return fc.hypotheses[g][e.x] == e.y; });
}

inline ConsistentLearner make_learner(LearnerPolicy policy) {
  return [policy](const FiniteClass& fc, const std::vector<LabeledInstance>& s) -> std::size_t {
    for (std::size_t k = 0; k < fc.size(); ++k) {
      const std::size_t g = policy == LearnerPolicy::first_consistent ? k : fc.size() - 1 - k;
      if (consistent_with(fc, g, s)) return g;
    }
    throw Error(ErrorCode::invalid_argument, "learner: no hypothesis is consistent with the sample");
  };
}

struct TeachingOptions {
  double delta = 0.1;
  std::size_t eta = 0;
  LearnerPolicy policy = LearnerPolicy::first_consistent;
  std::size_t max_rounds = 100000;
};

struct TeachingReport {
  std::size_t n_instances = 0;
  std::size_t n_hypotheses = 0;
  double delta = 0.0;
  std::size_t eta = 0;
  double lambda = 0.0;
  std::size_t target = 0;
  std::size_t learned = 0;
  std::size_t iterations = 0;
  std::size_t doublings = 0;
  std::vector<std::size_t> instance_doublings;
  std::vector<std::size_t> sample;  // in insertion order
  std::vector<double> tau;
  std::vector<double> final_weights;
  bool succeeded = false;
  bool stalled = false;
  double min_weight = std::numeric_limits<double>::infinity();
  double max_weight = 0.0;
  bool lemma4_event = false;  // an uninvalidated rival held total weight >= 1 after some round
  std::size_t teaching_dimension = 0;
  double rho = std::numeric_limits<double>::quiet_NaN();

  double total_weight() const {
    double s = 0.0;
    for (double w : final_weights) s += w;
    return s;
  }
  double doubling_bound() const { return static_cast<double>(teaching_dimension) * doubling_cap(n_instances); }
  double total_weight_bound() const { return 1.0 + doubling_bound(); }
  double expected_sample_bound() const { return total_weight_bound() * lambda; }
  bool weights_ok() const { return min_weight >= 1.0 / static_cast<double>(n_instances) && max_weight < 2.0; }
  bool lemma1_ok() const {
    const double cap = doubling_cap(n_instances);
    return std::all_of(instance_doublings.begin(), instance_doublings.end(),
                       [&](std::size_t c) { return static_cast<double>(c) <= cap; });
  }
  bool doublings_ok() const { return static_cast<double>(doublings) <= doubling_bound() + 1e-9; }
  bool total_weight_ok() const { return total_weight() <= total_weight_bound() + 1e-9; }
  bool bound_ok() const { return weights_ok() && lemma1_ok() && doublings_ok() && total_weight_ok(); }
};

/// Runs the weight-doubling teaching oracle against a consistent learner.
/// A round that adds nothing to S would hand the learner the same sample
/// again, so the run stops there as stalled (and unsuccessful).
inline TeachingReport teaching_oracle_run(const FiniteClass& fc, std::size_t g_star, const ConsistentLearner& learner,
                                          const TeachingOptions& opt, std::uint64_t seed) {
  fc.validate();
  require(g_star < fc.size(), ErrorCode::invalid_argument, "teaching: target out of range");
  require(opt.delta > 0.0 && opt.delta < 1.0, ErrorCode::invalid_argument, "teaching: delta must be in (0, 1)");
  require(static_cast<bool>(learner), ErrorCode::invalid_argument, "teaching: no learner");
  const std::size_t n = fc.n_instances;
  const auto& target = fc.hypotheses[g_star];

  TeachingReport rep;
  rep.n_instances = n;
  rep.n_hypotheses = fc.size();
  rep.delta = opt.delta;
  rep.eta = opt.eta;
  rep.target = g_star;
  rep.lambda = std::log(static_cast<double>(fc.size()) / opt.delta);
  rep.teaching_dimension = minimal_teaching_set(fc, g_star).size();
  rep.instance_doublings.assign(n, 0);

  Rng rng(seed);
  std::vector<double> w(n, 1.0 / static_cast<double>(n));
  rep.tau.resize(n);
  for (double& t : rep.tau) t = rng.exponential(rep.lambda);
  rep.min_weight = rep.max_weight = w[0];

  std::vector<LabeledInstance> s;
  std::vector<char> in_s(n, 0);

  for (std::size_t round = 1; round <= opt.max_rounds; ++round) {
    rep.iterations = round;
    const std::size_t g = learner(fc, s);
    require(g < fc.size() && consistent_with(fc, g, s), ErrorCode::invalid_argument,
            "teaching: learner returned an inconsistent hypothesis");
    rep.learned = g;
    std::vector<std::size_t> delta_set;
    for (std::size_t x = 0; x < n; ++x)
      if (fc.hypotheses[g][x] != target[x]) delta_set.push_back(x);
    if (delta_set.size() <= opt.eta) {
      rep.succeeded = true;
      break;
    }
    const std::size_t before = s.size();
    auto mass = [&]() {
      double m = 0.0;
      for (std::size_t x : delta_set) m += w[x];
      return m;
    };
    while (mass() < 1.0) {
      ++rep.doublings;
      for (std::size_t x : delta_set) {
        w[x] *= 2.0;
        ++rep.instance_doublings[x];
        rep.max_weight = std::max(rep.max_weight, w[x]);
        if (w[x] > rep.tau[x] && !in_s[x]) {
          in_s[x] = 1;
          s.push_back({x, target[x]});
          rep.sample.push_back(x);
        }
      }
    }
    for (std::size_t r = 0; r < fc.size() && !rep.lemma4_event; ++r) {
      if (r == g_star || !consistent_with(fc, r, s)) continue;
      double m = 0.0;
      for (std::size_t x = 0; x < n; ++x)
        if (fc.hypotheses[r][x] != target[x]) m += w[x];
      rep.lemma4_event = m >= 1.0;
    }
    if (s.size() == before) {
      rep.stalled = true;
      break;
    }
  }
  for (double v : w) rep.min_weight = std::min(rep.min_weight, v);
  rep.final_weights = std::move(w);
  return rep;
}

inline TeachingReport teaching_oracle_run(const FiniteClass& fc, std::size_t g_star, const TeachingOptions& opt,
                                          std::uint64_t seed) {
  return teaching_oracle_run(fc, g_star, make_learner(opt.policy), opt, seed);
}

/// Every per-instance doubling count stays within lg(2|X|).
inline bool verify_lemma1(const std::vector<TeachingReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const TeachingReport& r) { return r.lemma1_ok(); });
}

// ---------------------------------------------------------------------------
// Teaching through an explainer

/// Normalized 0-1 disagreement between two label vectors.
inline double disagreement_rate(const std::vector<Label>& a, const std::vector<Label>& b) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::dimension_mismatch, "disagreement: length mismatch");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
  return static_cast<double>(n) / static_cast<double>(a.size());
}

/// pi(h) = the closest hypothesis of G on X, lowest index on ties.
inline std::vector<std::size_t> nearest_projection(const FiniteClass& h, const FiniteClass& g) {
  require(h.n_instances == g.n_instances, ErrorCode::dimension_mismatch, "projection: instance spaces differ");
  std::vector<std::size_t> pi(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double d = disagreement_rate(h.hypotheses[i], g.hypotheses[j]);
      if (d < best) {
        best = d;
        pi[i] = j;
      }
    }
  }
  return pi;
}

struct ProjectionTeachingReport {
  TeachingReport teaching;
  std::size_t h_star = 0;
  std::size_t g_star = 0;
  std::size_t learned_h = 0;
  double rho = 0.0;
  double loss_h = 0.0;  // L(h, h*)
  double loss_g = 0.0;  // L(g, g*)
  bool holds() const { return loss_h <= loss_g + 2.0 * rho + 1e-12; }
};

inline ProjectionTeachingReport proposition1_pipeline(const FiniteClass& h, const FiniteClass& g,
                                                      const std::vector<std::size_t>& pi, std::size_t h_star,
                                                      const TeachingOptions& opt, std::uint64_t seed) {
  h.validate();
  g.validate();
  require(pi.size() == h.size(), ErrorCode::invalid_argument, "pipeline: explainer must be total on H");
  require(h_star < h.size(), ErrorCode::invalid_argument, "pipeline: target out of range");
  for (std::size_t p : pi) require(p < g.size(), ErrorCode::invalid_argument, "pipeline: explainer maps outside G");

  ProjectionTeachingReport out;
  out.h_star = h_star;
  out.g_star = pi[h_star];
  for (std::size_t i = 0; i < h.size(); ++i)
    out.rho = std::max(out.rho, disagreement_rate(h.hypotheses[i], g.hypotheses[pi[i]]));
  out.teaching = teaching_oracle_run(g, out.g_star, opt, seed);
  out.teaching.rho = out.rho;
  const std::size_t learned_g = out.teaching.learned;
  const auto it = std::find(pi.begin(), pi.end(), learned_g);
  require(it != pi.end(), ErrorCode::invalid_argument,
          "pipeline: learned explanation has no preimage in H (G is not contained in pi(H))");
  out.learned_h = static_cast<std::size_t>(it - pi.begin());
  out.loss_h = disagreement_rate(h.hypotheses[out.learned_h], h.hypotheses[h_star]);
  out.loss_g = disagreement_rate(g.hypotheses[learned_g], g.hypotheses[out.g_star]);
  return out;
}

/// All distinct labelings of a side x side grid realised by axis-aligned
/// threshold trees of depth at most 2 (grid point (i, j) is instance i*side+j).
inline FiniteClass depth2_tree_class(std::size_t side) {
  require(side >= 2, ErrorCode::invalid_argument, "depth2_tree_class: need side >= 2");
  const std::size_t n = side * side;
  struct Split {
    int feature;
    std::size_t cut;  // coordinate <= cut - 1 goes left
  };
  std::vector<Split> splits;
  for (int f = 0; f < 2; ++f)
    for (std::size_t c = 1; c < side; ++c) splits.push_back({f, c});
  auto coord = [side](std::size_t x, int f) { return f == 0 ? x / side : x % side; };
  auto goes_left = [&](std::size_t x, const Split& s) { return coord(x, s.feature) < s.cut; };

  // A subtree of depth <= 1: a constant or a split with two leaf labels.
  struct Stump {
    bool constant;
    Split split;
    Label left, right;
  };
  std::vector<Stump> stumps{{true, {0, 0}, 0, 0}, {true, {0, 0}, 1, 1}};
  for (const auto& s : splits)
    for (Label l : {0, 1})
      for (Label r : {0, 1})
        if (l != r) stumps.push_back({false, s, l, r});
  auto stump_label = [&](std::size_t x, const Stump& st) {
    return st.constant ? st.left : (goes_left(x, st.split) ? st.left : st.right);
  };

  FiniteClass fc;
  fc.n_instances = n;
  std::set<std::vector<Label>> seen;
  auto add = [&](std::vector<Label> labels) {
    if (seen.insert(labels).second) fc.hypotheses.push_back(std::move(labels));
  };
  for (const auto& st : stumps) {
    std::vector<Label> labels(n);
    for (std::size_t x = 0; x < n; ++x) labels[x] = stump_label(x, st);
    add(std::move(labels));
  }
  for (const auto& root : splits)
    for (const auto& a : stumps)
      for (const auto& b : stumps) {
        std::vector<Label> labels(n);
        for (std::size_t x = 0; x < n; ++x) labels[x] = goes_left(x, root) ? stump_label(x, a) : stump_label(x, b);
        add(std::move(labels));
      }
  return fc;
}

/// |H| distinct uniformly random labelings of n instances.
inline FiniteClass random_class(std::size_t n, std::size_t count, Rng& rng) {
  require(n < 63 && count <= (std::size_t{1} << n), ErrorCode::invalid_argument, "random_class: too many hypotheses");
  FiniteClass fc;
  fc.n_instances = n;
  std::set<std::vector<Label>> seen;
  while (fc.hypotheses.size() < count) {
    std::vector<Label> labels(n);
    for (auto& l : labels) l = static_cast<Label>(rng.index(2));
    if (seen.insert(labels).second) fc.hypotheses.push_back(std::move(labels));
  }
  return fc;
}

// ---------------------------------------------------------------------------
// Monte-Carlo trials

struct TeachingTrialSummary {
  std::size_t trials = 0;
  std::size_t successes = 0;
  std::size_t bound_violations = 0;  // successful trials breaking the doubling bound
  std::size_t weight_violations = 0;
  std::size_t lemma4_events = 0;
  double mean_sample_size = 0.0;
  double mean_sample_bound = 0.0;

  double success_rate() const { return trials ? static_cast<double>(successes) / static_cast<double>(trials) : 0.0; }
};

inline TeachingTrialSummary summarize_trials(const std::vector<TeachingReport>& reports) {
  TeachingTrialSummary s;
  s.trials = reports.size();
  for (const auto& r : reports) {
    s.successes += r.succeeded;
    s.bound_violations += r.succeeded && !r.doublings_ok();
    s.weight_violations += !r.weights_ok();
    s.lemma4_events += r.lemma4_event;
    s.mean_sample_size += static_cast<double>(r.sample.size());
    s.mean_sample_bound += r.expected_sample_bound();
  }
  if (s.trials) {
    s.mean_sample_size /= static_cast<double>(s.trials);
    s.mean_sample_bound /= static_cast<double>(s.trials);
  }
  return s;
}

/// Seeded trials on the threshold class; a negative `target` draws one per trial.
inline std::vector<TeachingReport> threshold_trials(std::size_t size, std::size_t trials, const TeachingOptions& opt,
                                                    std::uint64_t seed, long target) {
  const FiniteClass fc = threshold_class(size);
  std::vector<TeachingReport> out;
  for (std::size_t t = 0; t < trials; ++t) {
    std::size_t g_star = static_cast<std::size_t>(std::max<long>(target, 0));
    if (target < 0) {
      Rng pick(derive_seed(seed, "target", t));
      g_star = pick.index(fc.size());
    }
    out.push_back(teaching_oracle_run(fc, g_star, opt, derive_seed(seed, "trial", t)));
  }
  return out;
}

struct Proposition1Summary {
  std::size_t trials = 0;
  std::size_t halted = 0;          // oracle reached g* within tolerance
  std::size_t without_output = 0;  // oracle stalled on an explanation with no preimage in H
  std::size_t holds = 0;           // inequality holds among trials that produced an h
  std::size_t violations = 0;
  double max_rho = 0.0;
};

/// Random H over a side x side grid explained by depth-2 threshold trees
/// under the nearest projection.
inline Proposition1Summary proposition1_trials(std::size_t trials, std::size_t side, std::size_t h_size,
                                               const TeachingOptions& opt, std::uint64_t seed) {
  const FiniteClass g = depth2_tree_class(side);
  Proposition1Summary out;
  out.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, "hypotheses", t));
    const FiniteClass h = random_class(side * side, h_size, rng);
    const auto pi = nearest_projection(h, g);
    const std::size_t h_star = rng.index(h.size());
    const auto teach_seed = derive_seed(seed, "teach", t);
    const auto probe = teaching_oracle_run(g, pi[h_star], opt, teach_seed);
    out.halted += probe.succeeded;
    if (std::find(pi.begin(), pi.end(), probe.learned) == pi.end()) {
      ++out.without_output;
      continue;
    }
    const auto r = proposition1_pipeline(h, g, pi, h_star, opt, teach_seed);
    out.max_rho = std::max(out.max_rho, r.rho);
    (r.holds() ? out.holds : out.violations)++;
  }
  return out;
}

inline void write_teaching_csv(std::ostream& out, const std::vector<TeachingReport>& reports) {
  out << "trial,n_instances,n_hypotheses,delta,eta,iterations,doublings,sample_size,succeeded,bound_ok\n";
  for (std::size_t t = 0; t < reports.size(); ++t) {
    const auto& r = reports[t];
    out << t << ',' << r.n_instances << ',' << r.n_hypotheses << ',' << r.delta << ',' << r.eta << ','
        << r.iterations << ',' << r.doublings << ',' << r.sample.size() << ',' << (r.succeeded ? 1 : 0) << ','
        << (r.bound_ok() ? 1 : 0) << '\n';
  }
}

}  // namespace xgl
