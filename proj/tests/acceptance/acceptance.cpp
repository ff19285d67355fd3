// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   xgl_acceptance --work-dir DIR [--config FILE] [-j N]

#include <chrono>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "xgl/harness.hpp"
#include "xgl/teaching.hpp"

namespace {

using namespace xgl;
using Clock = std::chrono::steady_clock;

constexpr double kSyntheticGap = 0.10;
constexpr double kSyntheticFloor = 0.60;
constexpr double kAlUncNbFloor = 0.15;
constexpr std::size_t kUuWinsNeeded = 3;
constexpr double kParityTolerance = 0.07;
constexpr int kSteadyStateAfter = 20;
constexpr double kMinRules = 5.0, kMaxRules = 30.0;
constexpr double kMinFidelity = 0.80;
constexpr double kMinimalRateTheta100 = 0.85;
constexpr double kMinimalRateLoTheta10 = 0.50, kMinimalRateHiTheta10 = 0.80;
constexpr double kThetaF1Tolerance = 0.05;
constexpr double kTeachingSuccess = 0.90;
constexpr double kSyntheticMinutes = 15.0;
constexpr double kTeachingSeconds = 60.0;
constexpr std::size_t kOracleStates = 50;
constexpr std::size_t kOracleMaxPool = 200;

int g_failed = 0;

void verdict(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %-28s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  g_failed += !ok;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double f1_of(const std::vector<SummaryRow>& rows, const std::string& d, Strategy s) {
  const auto* r = find_row(rows, d, s);
  return r ? r->f1_mean : std::numeric_limits<double>::quiet_NaN();
}

double nb_of(const std::vector<SummaryRow>& rows, const std::string& d, Strategy s) {
  const auto* r = find_row(rows, d, s);
  return r ? r->nb_mean : std::numeric_limits<double>::quiet_NaN();
}

ExperimentConfig only_dataset(const ExperimentConfig& cfg, const std::string& name, bool keep) {
  ExperimentConfig out = cfg;
  out.datasets.clear();
  for (const auto& d : cfg.datasets)
    if ((d.name == name) == keep) out.datasets.push_back(d);
  return out;
}

struct MainRun {
  std::vector<RunRecord> records;
  std::vector<SummaryRow> rows;
  std::size_t failures = 0;
  double synthetic_seconds = 0.0;
  double total_seconds = 0.0;
};

MainRun run_all(const ExperimentConfig& cfg, const fs::path& out, std::size_t workers) {
  fs::remove_all(out);
  ExperimentConfig c = cfg;
  c.output_dir = out.string();
  RunOptions opt;
  opt.workers = workers;
  opt.log = nullptr;
  MainRun m;
  const auto t0 = Clock::now();
  const auto syn = run_experiment(only_dataset(c, "synthetic", true), opt);
  m.synthetic_seconds = seconds_since(t0);
  const auto rest = run_experiment(only_dataset(c, "synthetic", false), opt);
  m.total_seconds = seconds_since(t0);
  for (const auto* r : {&syn, &rest}) {
    for (const auto& f : r->failures) std::fprintf(stderr, "failed: %s: %s\n", f.key.id().c_str(), f.message.c_str());
    m.failures += r->failures.size();
  }
  m.records = load_records(out);
  if (!m.records.empty()) m.rows = write_summaries(out, m.records);
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void check_synthetic(const MainRun& m) {
  const double xgl = f1_of(m.rows, "synthetic", Strategy::xgl);
  const double unc = f1_of(m.rows, "synthetic", Strategy::al_unc);
  const bool ok = xgl >= unc + kSyntheticGap && xgl >= kSyntheticFloor && m.synthetic_seconds <= kSyntheticMinutes * 60;
  verdict(ok, "synthetic_f1_gap",
          fmt("xgl=%.4f al_unc=%.4f gap=%.4f (need >= %.2f, xgl >= %.2f); synthetic %.0fs (<= %.0fs)", xgl, unc,
              xgl - unc, kSyntheticGap, kSyntheticFloor, m.synthetic_seconds, kSyntheticMinutes * 60));

  const double nb_xgl = nb_of(m.rows, "synthetic", Strategy::xgl);
  const double nb_unc = nb_of(m.rows, "synthetic", Strategy::al_unc);
  verdict(nb_xgl < 0.0 && nb_unc > kAlUncNbFloor, "synthetic_nb_signs",
          fmt("nb xgl=%.4f (need < 0) al_unc=%.4f (need > %.2f)", nb_xgl, nb_unc, kAlUncNbFloor));
}

void check_uu(const MainRun& m) {
  const std::vector<std::string> names = {"heart+uu", "glass+uu", "australian+uu", "hepatitis+uu"};
  const Strategy arms[] = {Strategy::al_unc, Strategy::al_repr, Strategy::gl, Strategy::xgl};
  std::size_t wins = 0;
  std::string detail;
  for (const auto& d : names) {
    const double x = nb_of(m.rows, d, Strategy::xgl);
    bool strict = std::isfinite(x);
    double best_other = std::numeric_limits<double>::infinity();
    for (Strategy s : arms) {
      if (s == Strategy::xgl) continue;
      const double v = nb_of(m.rows, d, s);
      best_other = std::min(best_other, v);
      strict = strict && std::isfinite(v) && x < v;
    }
    wins += strict;
    detail += fmt("%s %s xgl=%.3f other=%.3f; ", d.c_str(), strict ? "win" : "loss", x, best_other);
  }
  verdict(wins >= kUuWinsNeeded, "uu_lowest_nb",
          fmt("%zu/%zu (need >= %zu): ", wins, names.size(), kUuWinsNeeded) + detail);
}

void check_parity(const MainRun& m) {
  const std::vector<std::string> names = {"iris", "wine", "glass", "heart"};
  const Strategy rivals[] = {Strategy::random, Strategy::al_unc, Strategy::al_repr, Strategy::gl};
  bool ok = true;
  std::string detail;
  for (const auto& d : names) {
    const double x = f1_of(m.rows, d, Strategy::xgl);
    double best = -1.0;
    for (Strategy s : rivals) best = std::max(best, f1_of(m.rows, d, s));
    const bool fine = std::isfinite(x) && best >= 0.0 && x >= best - kParityTolerance;
    ok = ok && fine;
    detail += fmt("%s xgl=%.3f best=%.3f; ", d.c_str(), x, best);
  }
  verdict(ok, "small_dataset_parity", fmt("within %.2f of best rival: ", kParityTolerance) + detail);
}

void check_explanations(const MainRun& m) {
  std::map<std::string, std::pair<double, double>> mean_rules;  // dataset -> (min, max) per-run mean
  std::map<std::string, double> min_fid;
  std::size_t runs = 0;
  bool rules_ok = true, fid_ok = true;
  for (const auto& r : m.records) {
    if (r.key.strategy != Strategy::xgl) continue;
    double sum = 0, n = 0;
    auto& fid = min_fid.try_emplace(r.key.dataset, std::numeric_limits<double>::infinity()).first->second;
    for (const auto& row : r.rows) {
      if (row.trace.iteration <= kSteadyStateAfter) continue;
      sum += static_cast<double>(row.trace.rule_count);
      n += 1;
      if (!std::isnan(row.trace.fidelity)) {
        fid = std::min(fid, row.trace.fidelity);
        fid_ok = fid_ok && row.trace.fidelity >= kMinFidelity;
      }
    }
    if (n == 0) continue;
    ++runs;
    const double mean = sum / n;
    rules_ok = rules_ok && mean >= kMinRules && mean <= kMaxRules;
    auto [it, fresh] = mean_rules.try_emplace(r.key.dataset, mean, mean);
    if (!fresh) it->second = {std::min(it->second.first, mean), std::max(it->second.second, mean)};
  }
  std::string rule_detail, fid_detail;
  for (const auto& [d, mm] : mean_rules) rule_detail += fmt("%s [%.1f, %.1f]; ", d.c_str(), mm.first, mm.second);
  for (const auto& [d, f] : min_fid) fid_detail += fmt("%s %.3f; ", d.c_str(), f);
  verdict(runs > 0 && rules_ok, "rule_count_range",
          fmt("per-run mean rules after iteration %d in [%.0f, %.0f] over %zu xgl runs: ", kSteadyStateAfter,
              kMinRules, kMaxRules, runs) +
              rule_detail);
  verdict(runs > 0 && fid_ok, "surrogate_fidelity",
          fmt("min fidelity after iteration %d (need >= %.2f): ", kSteadyStateAfter, kMinFidelity) + fid_detail);
}

void check_theta(const ExperimentConfig& cfg, const MainRun& m, const fs::path& work, std::size_t workers) {
  std::vector<RunRecord> at100;
  for (const auto& r : m.records)
    if (r.key.dataset == "synthetic" && r.key.strategy == Strategy::xgl) at100.push_back(r);
  ExperimentConfig base = only_dataset(cfg, "synthetic", true);
  base.output_dir = (work / "theta").string();
  fs::remove_all(base.output_dir);
  RunOptions opt;
  opt.workers = workers;
  opt.log = nullptr;
  const auto sweep = theta_sweep(base, {10.0}, opt);
  const auto& at10 = sweep.runs.front().records;
  const bool complete = sweep.runs.front().failures.empty() && !at10.empty() && !at100.empty();
  const double rate100 = complete ? minimal_rule_rate(at100) : std::nan("");
  const double rate10 = complete ? minimal_rule_rate(at10) : std::nan("");
  const double f1_100 = complete ? summarize(at100).front().f1_mean : std::nan("");
  const double f1_10 = complete ? summarize(at10).front().f1_mean : std::nan("");
  const bool ok = complete && cfg.theta == 100.0 && rate100 >= kMinimalRateTheta100 && rate10 >= kMinimalRateLoTheta10 &&
                  rate10 <= kMinimalRateHiTheta10 && std::abs(f1_10 - f1_100) <= kThetaF1Tolerance;
  verdict(ok, "theta_selection",
          fmt("minimal-rule rate theta=100 %.3f (>= %.2f), theta=10 %.3f (in [%.2f, %.2f]); f1 %.4f vs %.4f (<= %.2f)",
              rate100, kMinimalRateTheta100, rate10, kMinimalRateLoTheta10, kMinimalRateHiTheta10, f1_10, f1_100,
              kThetaF1Tolerance));
}

void check_teaching() {
  TeachingOptions opt;
  opt.delta = 0.1;
  opt.eta = 0;
  const auto t0 = Clock::now();
  const auto reports = threshold_trials(32, 200, opt, 0, -1);
  const double secs = seconds_since(t0);
  const auto s = summarize_trials(reports);
  const bool ok = s.success_rate() >= kTeachingSuccess && s.bound_violations == 0 && s.weight_violations == 0 &&
                  s.mean_sample_size <= s.mean_sample_bound && secs <= kTeachingSeconds;
  verdict(ok, "teaching_oracle",
          fmt("|X|=32, 200 trials: success %.3f (>= %.2f), doubling-bound violations %zu, weight violations %zu, "
              "mean |S| %.2f <= bound %.2f, %.2fs",
              s.success_rate(), kTeachingSuccess, s.bound_violations, s.weight_violations, s.mean_sample_size,
              s.mean_sample_bound, secs));
}

void check_projection() {
  TeachingOptions opt;
  const auto s = proposition1_trials(100, 4, 64, opt, 0);
  verdict(s.violations == 0 && s.holds + s.without_output == s.trials, "projection_inequality",
          fmt("%zu trials: holds %zu, violations %zu, without output %zu, halted %zu, max rho %.4f", s.trials, s.holds,
              s.violations, s.without_output, s.halted, s.max_rho));
}

void check_determinism(const MainRun& a, const MainRun& b, const fs::path& work) {
  const std::string sa = slurp(work / "run1" / "summary.csv");
  const std::string sb = slurp(work / "run2" / "summary.csv");
  verdict(!sa.empty() && sa == sb && a.failures == 0 && b.failures == 0, "deterministic_summary",
          fmt("summary.csv %zu vs %zu bytes, %s; failures %zu/%zu; runs took %.0fs and %.0fs", sa.size(), sb.size(),
              sa == sb ? "identical" : "different", a.failures, b.failures, a.total_seconds, b.total_seconds));
}

// Brute-force selectors written from the definitions, independent of the library loops.
std::size_t oracle_uncertain(const std::vector<std::size_t>& pool, const std::vector<ClassProbabilities>& p) {
  std::size_t best = pool.front();
  for (std::size_t i : pool) {
    const double gi = std::abs(p[i].p1 - p[i].p0), gb = std::abs(p[best].p1 - p[best].p0);
    if (gi < gb || (gi == gb && i < best)) best = i;
  }
  return best;
}

std::vector<long double> oracle_representative_scores(const std::vector<std::size_t>& pool,
                                                      const std::vector<ClassProbabilities>& p, const Matrix& x) {
  std::vector<long double> score(x.rows(), -1);
  for (std::size_t i : pool) {
    long double density = 0;
    for (std::size_t j : pool) {
      long double dot = 0, ni = 0, nj = 0;
      for (std::size_t k = 0; k < x.cols(); ++k) {
        dot += x(i, k) * x(j, k);
        ni += x(i, k) * x(i, k);
        nj += x(j, k) * x(j, k);
      }
      density += (ni == 0 || nj == 0) ? 0 : dot / std::sqrt(ni * nj);
    }
    density /= static_cast<long double>(pool.size());
    score[i] = (1 - std::max(p[i].p0, p[i].p1)) * density;
  }
  return score;
}

void check_oracles() {
  Rng rng(derive_seed(0, "acceptance", "oracles"));
  std::size_t unc_ok = 0, repr_ok = 0;
  for (std::size_t s = 0; s < kOracleStates; ++s) {
    const std::size_t n = 1 + rng.index(kOracleMaxPool);
    const std::size_t dims = 1 + rng.index(6);
    const bool coarse = s % 3 == 0;  // coarse probabilities force ties
    Matrix x(n, dims);
    std::vector<ClassProbabilities> probs(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < dims; ++k) x(i, k) = coarse ? static_cast<double>(rng.index(3)) : rng.normal();
      const double p1 = coarse ? static_cast<double>(rng.index(11)) / 10.0 : rng.uniform();
      probs[i] = {1.0 - p1, p1};
    }
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < n; ++i)
      if (rng.uniform() < 0.7 || i == 0) pool.push_back(i);
    unc_ok += select_uncertain(pool, probs) == oracle_uncertain(pool, probs);
    const SimilarityMatrix sim(x);
    const std::size_t got = select_representative(pool, probs, sim, 1.0);
    const auto score = oracle_representative_scores(pool, probs, x);
    const long double top = *std::max_element(score.begin(), score.end());
    std::size_t first_top = pool.front();
    for (std::size_t i : pool)
      if (score[i] >= top - 1e-12L) {
        first_top = i;
        break;
      }
    repr_ok += std::abs(score[got] - top) <= 1e-12L && (got == first_top || std::abs(score[first_top] - score[got]) <= 1e-12L);
  }
  verdict(unc_ok == kOracleStates && repr_ok == kOracleStates, "selector_oracles",
          fmt("%zu random states (pool <= %zu): uncertainty %zu agree, representativeness %zu agree", kOracleStates,
              kOracleMaxPool, unc_ok, repr_ok));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance gate"};
  std::string work_dir = "acceptance_work";
  std::string config = std::string(XGL_CONFIG_DIR) + "/acceptance.yaml";
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--work-dir", work_dir, "Scratch directory for results")->capture_default_str();
  app.add_option("--config", config, "Experiment config")->capture_default_str()->check(CLI::ExistingFile);
  app.add_option("-j,--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path work(work_dir);
    fs::create_directories(work);
    const ExperimentConfig cfg = load_experiment_config(config);

    check_oracles();
    check_teaching();
    check_projection();

    const MainRun first = run_all(cfg, work / "run1", workers);
    if (first.rows.empty()) throw Error(ErrorCode::io, "no records were produced");
    check_synthetic(first);
    check_uu(first);
    check_parity(first);
    check_explanations(first);
    check_theta(cfg, first, work, workers);

    const MainRun second = run_all(cfg, work / "run2", workers);
    check_determinism(first, second, work);
  } catch (const std::exception& e) {
    verdict(false, "acceptance_run", e.what());
  }
  std::printf("%d criteria failed\n", g_failed);
  return g_failed == 0 ? 0 : 1;
}
