#pragma once

// Live XGL sessions driven by a human supervisor.
//
// SessionCore is the deterministic state machine (fit, distill, accept labels).
// SessionManager owns many sessions, serializes mutations per session in FIFO
// order, publishes immutable snapshots for readers, and keeps an append-only
// audit log that is all a restart needs to rebuild a session.

#include <chrono>
#include <condition_variable>
#include <ctime>
#include <future>
#include <memory>
#include <random>
#include <shared_mutex>
#include <unordered_map>

#include "xgl/harness.hpp"

namespace xgl {

inline constexpr int kSessionSchemaVersion = 1;

struct SessionRequest {
  std::string dataset = "synthetic";
  std::optional<std::string> csv;  // uploaded table; `dataset` is then just its name
  PreprocessSpec preprocess;       // uploads only
  std::optional<ModelSpec> model;
  std::uint64_t seed = 0;
  /// Empty: the whole dataset is the pool and there is no test split.
  /// Set: the pool is that harness fold's training part.
  std::optional<std::size_t> fold;
  std::size_t folds = 5;
  std::size_t initial_size = 5;
  SurrogateParams surrogate;
  std::size_t smoothing_window = 5;
};

inline SessionRequest parse_session_request(const nlohmann::json& j) {
  using namespace detail;
  require(j.is_object(), ErrorCode::invalid_argument, "request body must be a JSON object");
  check_keys(j,
             {"v", "dataset", "model", "seed", "fold", "folds", "initial_size", "surrogate", "smoothing_window",
              "preprocess"},
             "session request");
  require(!j.contains("v") || j["v"] == kSessionSchemaVersion, ErrorCode::invalid_argument,
          "unsupported schema version");
  SessionRequest r;
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    if (d.is_string()) {
      r.dataset = d.get<std::string>();
    } else {
      check_keys(d, {"name", "csv"}, "dataset");
      require(d.contains("name") && d["name"].is_string() && d.contains("csv") && d["csv"].is_string(),
              ErrorCode::invalid_argument, "an uploaded dataset needs string 'name' and 'csv'");
      r.dataset = d["name"].get<std::string>();
      r.csv = d["csv"].get<std::string>();
    }
  }
  require(!r.dataset.empty(), ErrorCode::invalid_argument, "dataset name is empty");
  if (j.contains("model")) {
    try {
      r.model = model_spec_from_json(j["model"]);
      r.model->validate();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::invalid_argument, std::string("model: ") + e.what());
    }
  }
  if (j.contains("seed")) {
    require(j["seed"].is_number_integer() && j["seed"].get<long long>() >= 0, ErrorCode::invalid_argument,
            "seed must be a non-negative integer");
    r.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("fold") && !j["fold"].is_null()) r.fold = get_count(j, "fold", 0);
  r.folds = get_count(j, "folds", r.folds);
  r.initial_size = get_count(j, "initial_size", r.initial_size);
  r.smoothing_window = get_count(j, "smoothing_window", r.smoothing_window);
  require(r.folds >= 2, ErrorCode::invalid_argument, "folds must be >= 2");
  require(!r.fold || *r.fold < r.folds, ErrorCode::invalid_argument, "fold must be < folds");
  require(r.initial_size >= 4, ErrorCode::invalid_argument, "initial_size must be >= 4");
  require(r.smoothing_window >= 1, ErrorCode::invalid_argument, "smoothing_window must be >= 1");
  if (j.contains("surrogate")) {
    const auto& s = j["surrogate"];
    check_keys(s, {"max_depth", "min_leaf", "max_rules"}, "surrogate");
    r.surrogate.max_depth = static_cast<int>(get_count(s, "max_depth", 6));
    r.surrogate.min_leaf = get_count(s, "min_leaf", 0);
    r.surrogate.max_rules = get_count(s, "max_rules", 30);
    r.surrogate.validate();
  }
  if (j.contains("preprocess")) {
    require(r.csv.has_value(), ErrorCode::invalid_argument, "'preprocess' applies to uploaded datasets only");
    r.preprocess = parse_preprocess(j["preprocess"]);
    r.preprocess.validate();
  }
  return r;
}

struct FeedbackItem {
  std::size_t instance = 0;  // dataset row id
  Label label = 0;
};

struct Rejection {
  std::size_t instance = 0;
  std::string reason;
};

struct FeedbackReport {
  std::vector<FeedbackItem> accepted;
  std::vector<Rejection> rejected;
  int iteration = 0;
};

inline std::vector<FeedbackItem> parse_feedback(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::invalid_argument, "request body must be a JSON object");
  detail::check_keys(j, {"v", "labels"}, "feedback");
  require(!j.contains("v") || j["v"] == kSessionSchemaVersion, ErrorCode::invalid_argument,
          "unsupported schema version");
  require(j.contains("labels") && j["labels"].is_array() && !j["labels"].empty(), ErrorCode::invalid_argument,
          "'labels' must be a non-empty list");
  std::vector<FeedbackItem> out;
  for (const auto& it : j["labels"]) {
    require(it.is_object() && it.contains("instance") && it.contains("label"), ErrorCode::invalid_argument,
            "each label needs 'instance' and 'label'");
    detail::check_keys(it, {"instance", "label"}, "labels[]");
    require(it["instance"].is_number_integer() && it["instance"].get<long long>() >= 0, ErrorCode::invalid_argument,
            "'instance' must be a non-negative integer");
    require(it["label"].is_number_integer() && (it["label"] == 0 || it["label"] == 1), ErrorCode::invalid_argument,
            "'label' must be 0 or 1");
    out.push_back({it["instance"].get<std::size_t>(), static_cast<Label>(it["label"].get<int>())});
  }
  return out;
}

inline nlohmann::json to_json(const std::vector<FeedbackItem>& items) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& i : items) arr.push_back({{"instance", i.instance}, {"label", i.label}});
  return arr;
}

/// Per-iteration series when one iteration may carry several queries.
/// With one query per iteration this is exactly `build_series`.
inline MetricSeries batch_series(std::span<const QueryRecord> log, std::span<const double> test_f1,
                                 std::span<const double> test_risk, std::size_t window) {
  require(test_f1.size() == test_risk.size(), ErrorCode::dimension_mismatch, "batch_series: length mismatch");
  MetricSeries s;
  std::vector<Label> pred, truth;
  std::vector<double> q;
  double losses = 0.0;
  std::size_t k = 0;
  for (std::size_t t = 0; t < test_f1.size(); ++t) {
    const int iteration = static_cast<int>(t) + 1;
    for (; k < log.size() && log[k].iteration == iteration; ++k) {
      pred.push_back(log[k].predicted);
      truth.push_back(log[k].truth);
      losses += log[k].predicted != log[k].truth;
    }
    require(!pred.empty(), ErrorCode::invalid_argument, "batch_series: iteration without queries");
    q.push_back(macro_f1(pred, truth));
    MetricRecord r;
    r.iteration = iteration;
    r.test_macro_f1 = test_f1[t];
    r.query_macro_f1 = q.back();
    r.nb_experimental = q.back() - test_f1[t];
    r.nb_formal = losses / static_cast<double>(pred.size()) - test_risk[t];
    s.records.push_back(r);
  }
  require(k == log.size(), ErrorCode::invalid_argument, "batch_series: queries beyond the last iteration");
  const auto qs = smooth_trailing(q, window);
  for (std::size_t t = 0; t < qs.size(); ++t) s.records[t].nb_smoothed = qs[t] - test_f1[t];
  return s;
}

// ---------------------------------------------------------------------------

class SessionCore {
 public:
  SessionCore(const Dataset& d, const FoldSplit& fold, ModelSpec spec, std::uint64_t run_seed, SurrogateParams surrogate,
              std::size_t window)
      : view_(d, fold),
        spec_(std::move(spec)),
        run_seed_(run_seed),
        surrogate_(surrogate),
        window_(window),
        pool_(view_.pool_x.rows(), view_.initial_positions) {
    spec_.validate();
    // Unrevealed labels are dropped here, so nothing downstream can leak them.
    for (std::size_t p : pool_.unlabeled()) view_.pool_truth[p] = 0;
    for (const auto& m : d.meta) feature_names_.push_back(m.name);
    refit();
  }

  int iteration() const { return iteration_; }
  bool exhausted() const { return pool_.unlabeled().empty(); }
  std::size_t labeled_count() const { return pool_.labeled().size(); }
  std::size_t unlabeled_count() const { return pool_.unlabeled().size(); }
  const TrainedModel& model() const { return *model_; }
  const RuleSet& rules() const { return *rules_; }
  const std::vector<QueryRecord>& query_log() const { return log_; }
  /// Test F1 of the model currently presented; NaN without a test split.
  double current_test_macro_f1() const { return current_f1_; }

  MetricSeries metrics() const { return batch_series(log_, test_f1_, test_risk_, window_); }

  /// Checks a batch without mutating anything.
  FeedbackReport review(const std::vector<FeedbackItem>& items) const {
    FeedbackReport rep;
    rep.iteration = iteration_;
    std::vector<std::size_t> seen;
    for (const auto& it : items) {
      const auto pos = position_of(it.instance);
      if (!pos) {
        rep.rejected.push_back({it.instance, "not_in_pool"});
      } else if (pool_.is_labeled(*pos)) {
        rep.rejected.push_back({it.instance, "already_labeled"});
      } else if (std::find(seen.begin(), seen.end(), *pos) != seen.end()) {
        rep.rejected.push_back({it.instance, "duplicate_in_batch"});
      } else {
        seen.push_back(*pos);
        rep.accepted.push_back(it);
      }
    }
    return rep;
  }

  /// One batch is one iteration: predictions of the presented model are
  /// logged, labels revealed, then the model is refit and redistilled.
  FeedbackReport apply(const std::vector<FeedbackItem>& items) {
    FeedbackReport rep = review(items);
    if (rep.accepted.empty()) return rep;
    const TrainedModel& h = *model_;
    ++iteration_;
    for (const auto& it : rep.accepted) {
      const std::size_t pos = *position_of(it.instance);
      const auto row = view_.pool_x.row(pos);
      const Label predicted = h.probabilities(row).argmax();
      log_.push_back({iteration_, it.instance, predicted, it.label, rules_->rules[rules_->rule_index(row)].id});
      view_.pool_truth[pos] = it.label;
      pool_.reveal(pos);
    }
    test_f1_.push_back(current_f1_);
    test_risk_.push_back(current_risk_);
    refit();
    rep.iteration = iteration_;
    return rep;
  }

  nlohmann::json explanation_json() const {
    return {{"v", kSessionSchemaVersion},
            {"iteration", iteration_},
            {"status", exhausted() ? "exhausted" : "active"},
            {"labeled_count", labeled_count()},
            {"unlabeled_count", unlabeled_count()},
            {"feature_names", feature_names_},
            {"test_macro_f1", nullable(current_f1_)},
            {"explanation", to_json(*rules_)}};
  }

  /// Unlabeled instances grouped by the rule covering them, each carrying the
  /// rule's predicted label.
  nlohmann::json group_json(const Rule& r) const {
    nlohmann::json instances = nlohmann::json::array();
    std::size_t labeled = 0;
    for (std::size_t pos : r.coverage) {
      if (pool_.is_labeled(pos)) {
        ++labeled;
        continue;
      }
      const auto row = view_.pool_x.row(pos);
      instances.push_back(
          {{"id", view_.pool_rows[pos]}, {"features", std::vector<double>(row.begin(), row.end())}, {"label", r.label}});
    }
    return {{"rule_id", r.id}, {"label", r.label}, {"labeled_count", labeled}, {"instances", instances}};
  }

  nlohmann::json instances_json(std::optional<int> rule_id = std::nullopt) const {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& r : rules_->rules)
      if (!rule_id || r.id == *rule_id) groups.push_back(group_json(r));
    require(!rule_id || !groups.empty(), ErrorCode::not_found, "unknown rule " + std::to_string(rule_id.value_or(-1)));
    return {{"v", kSessionSchemaVersion}, {"iteration", iteration_}, {"groups", groups}};
  }

  nlohmann::json metrics_json() const {
    nlohmann::json records = nlohmann::json::array();
    const auto series = metrics();
    for (std::size_t t = 0; t < series.records.size(); ++t) {
      const auto& r = series.records[t];
      std::size_t batch = 0;
      for (const auto& q : log_) batch += q.iteration == r.iteration;
      records.push_back({{"iteration", r.iteration},
                         {"batch_size", batch},
                         {"test_macro_f1", nullable(r.test_macro_f1)},
                         {"query_macro_f1", nullable(r.query_macro_f1)},
                         {"nb_experimental", nullable(r.nb_experimental)},
                         {"nb_smoothed", nullable(r.nb_smoothed)},
                         {"nb_formal", nullable(r.nb_formal)}});
    }
    return {{"v", kSessionSchemaVersion}, {"iteration", iteration_}, {"records", records}};
  }

 private:
  std::optional<std::size_t> position_of(std::size_t row) const {
    const auto it = std::lower_bound(view_.pool_rows.begin(), view_.pool_rows.end(), row);
    if (it == view_.pool_rows.end() || *it != row) return std::nullopt;
    return static_cast<std::size_t>(it - view_.pool_rows.begin());
  }

  void refit() {
    model_.emplace(fit_on_positions(spec_, view_, pool_.labeled(), derive_seed(run_seed_, "fit", iteration_ + 1)));
    if (view_.test_truth.empty()) {
      current_f1_ = current_risk_ = std::numeric_limits<double>::quiet_NaN();
    } else {
      const auto pred = model_->predict(view_.test_x);
      current_f1_ = macro_f1(pred, view_.test_truth);
      current_risk_ = zero_one_risk(pred, view_.test_truth);
    }
    rules_ = score_rules(distill(*model_, view_.pool_x, surrogate_), view_.pool_truth, RuleF1Mode::within_coverage,
                         pool_.labeled_mask());
  }

  FoldView view_;
  ModelSpec spec_;
  std::uint64_t run_seed_;
  SurrogateParams surrogate_;
  std::size_t window_;
  PoolPartition pool_;
  std::vector<std::string> feature_names_;
  int iteration_ = 0;
  std::optional<TrainedModel> model_;
  std::optional<RuleSet> rules_;
  double current_f1_ = 0.0, current_risk_ = 0.0;
  std::vector<QueryRecord> log_;
  std::vector<double> test_f1_, test_risk_;
};

inline std::vector<DatasetConfig> default_session_registry() {
  DatasetConfig synthetic;
  synthetic.name = "synthetic";
  synthetic.synthetic = SyntheticParams{};
  return {synthetic};
}

/// Builds the initial state for a request. A request naming a fold reproduces
/// the harness run for (dataset, fold, seed) exactly.
inline std::unique_ptr<SessionCore> build_session_core(const SessionRequest& r, const std::vector<DatasetConfig>& registry) {
  Dataset d;
  ModelSpec spec = r.model.value_or(ModelSpec::gbt());
  if (r.csv) {
    std::istringstream in(*r.csv);
    d = preprocess_table(parse_csv(in), r.preprocess, r.seed, "upload:" + r.dataset);
    if (!r.model) spec = default_model_for(r.dataset);
  } else {
    const auto it = std::find_if(registry.begin(), registry.end(), [&](const DatasetConfig& c) { return c.name == r.dataset; });
    require(it != registry.end(), ErrorCode::not_found, "unknown dataset '" + r.dataset + "'");
    d = build_dataset(*it, r.seed);
    if (!r.model) spec = model_for(*it);
  }
  FoldSplit fold;
  std::uint64_t run_seed = 0;
  if (r.fold) {
    fold = stratified_kfold(d, r.folds, r.seed, r.initial_size).at(*r.fold);
    run_seed = fold_run_seed(r.seed, *r.fold);
  } else {
    fold.fold_index = -1;
    for (std::size_t i = 0; i < d.size(); ++i) fold.train_indices.push_back(i);
    Rng rng(derive_seed(r.seed, "initial", "session"));
    fold.initial_labeled = sample_initial_set(fold.train_indices, d.labels, r.initial_size, 2, rng);
    run_seed = derive_seed(r.seed, "session");
  }
  return std::make_unique<SessionCore>(d, fold, spec, run_seed, r.surrogate, r.smoothing_window);
}

/// Rebuilds a session from its audit log: the create request, then every
/// accepted batch in order.
inline std::unique_ptr<SessionCore> replay_audit(const nlohmann::json& audit, const std::vector<DatasetConfig>& registry) {
  require(audit.is_array() && !audit.empty() && audit[0].value("op", "") == "create", ErrorCode::parse_error,
          "audit log must start with a create entry");
  auto core = build_session_core(parse_session_request(audit[0].at("request")), registry);
  for (std::size_t i = 1; i < audit.size(); ++i) {
    const auto& e = audit[i];
    require(e.value("op", "") == "feedback", ErrorCode::parse_error, "audit: unknown entry");
    const auto items = parse_feedback({{"labels", e.at("accepted")}});
    const auto rep = core->apply(items);
    require(rep.rejected.empty() && rep.iteration == e.at("iteration").get<int>(), ErrorCode::conflict,
            "audit: replay diverged at entry " + std::to_string(i));
  }
  return core;
}

// ---------------------------------------------------------------------------

namespace detail {

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

/// 128 random bits as 32 hex characters.
inline std::string random_token() {
  static std::mutex m;
  static std::random_device rd;
  std::lock_guard<std::mutex> lock(m);
  char out[33];
  for (int i = 0; i < 4; ++i) std::snprintf(out + 8 * i, 9, "%08x", static_cast<unsigned>(rd()));
  return std::string(out, 32);
}

}  // namespace detail

/// Read-only view published after every mutation.
struct SessionSnapshot {
  std::string id;
  std::string created;
  std::string updated;
  int iteration = 0;
  bool exhausted = false;
  nlohmann::json explanation;
  nlohmann::json instances;
  nlohmann::json metrics;
  std::vector<int> rule_ids;
};

/// Outcome of a mutation request, already shaped for HTTP.
struct Reply {
  int status = 200;
  nlohmann::json body;
};

inline Reply error_reply(int status, const std::string& code, const std::string& message) {
  return {status, {{"v", kSessionSchemaVersion}, {"error", {{"code", code}, {"message", message}}}}};
}

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::invalid_argument:
    case ErrorCode::dimension_mismatch:
    case ErrorCode::parse_error: return 422;
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict: return 409;
    default: return 500;
  }
}

inline Reply error_reply(const Error& e) { return error_reply(http_status(e.code()), std::string(to_string(e.code())), e.what()); }

struct SessionManagerOptions {
  std::vector<DatasetConfig> registry = default_session_registry();
  std::optional<fs::path> snapshot_dir;
  /// Mutations running longer than this answer 202 with a poll handle.
  std::chrono::milliseconds refit_timeout{30000};
};

class SessionManager {
 public:
  explicit SessionManager(SessionManagerOptions opt = {}) : opt_(std::move(opt)) {
    if (opt_.snapshot_dir) fs::create_directories(*opt_.snapshot_dir);
  }
  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  ~SessionManager() {
    std::lock_guard<std::mutex> lock(ops_mutex_);
    for (auto& [id, f] : ops_) f.wait();
  }

  /// Creates a session; the reply carries the id, explanation and instances.
  Reply create(const nlohmann::json& request) {
    try {
      const SessionRequest r = parse_session_request(request);
      auto entry = std::make_shared<Entry>();
      entry->core = build_session_core(r, opt_.registry);
      entry->id = detail::random_token();
      entry->created = detail::utc_now();
      entry->audit.push_back({{"seq", 0}, {"op", "create"}, {"at", entry->created}, {"request", request}});
      publish(*entry, entry->created);
      {
        std::unique_lock lock(map_mutex_);
        sessions_[entry->id] = entry;
      }
      const auto snap = std::atomic_load(&entry->snapshot);
      nlohmann::json body = snap->explanation;
      body["id"] = entry->id;
      body["instances"] = snap->instances["groups"];
      return {201, body};
    } catch (const Error& e) {
      return error_reply(e);
    } catch (const std::exception& e) {
      return error_reply(422, "invalid_argument", e.what());
    }
  }

  /// Latest published state; never waits for a running mutation.
  std::shared_ptr<const SessionSnapshot> snapshot(const std::string& id) const {
    return std::atomic_load(&entry(id)->snapshot);
  }

  Reply explanation(const std::string& id) const {
    return guarded([&] { return Reply{200, with_id(snapshot(id)->explanation, id)}; });
  }

  Reply metrics(const std::string& id) const {
    return guarded([&] { return Reply{200, with_id(snapshot(id)->metrics, id)}; });
  }

  Reply instances(const std::string& id, std::optional<int> rule) const {
    return guarded([&] {
      const auto snap = snapshot(id);
      if (!rule) return Reply{200, with_id(snap->instances, id)};
      for (const auto& g : snap->instances["groups"])
        if (g["rule_id"] == *rule)
          return Reply{200, with_id({{"v", kSessionSchemaVersion}, {"iteration", snap->iteration}, {"groups", nlohmann::json::array({g})}}, id)};
      return error_reply(404, "not_found", "unknown rule " + std::to_string(*rule));
    });
  }

  Reply audit(const std::string& id) const {
    return guarded([&] {
      const auto e = entry(id);
      std::lock_guard<std::mutex> lock(e->audit_mutex);
      return Reply{200, {{"v", kSessionSchemaVersion}, {"id", id}, {"entries", e->audit}}};
    });
  }

  /// Queues a feedback batch behind earlier mutations of the same session.
  Reply feedback(const std::string& id, const nlohmann::json& body,
                 std::optional<std::chrono::milliseconds> timeout = std::nullopt) {
    std::shared_ptr<Entry> e;
    std::vector<FeedbackItem> items;
    try {
      e = entry(id);
      items = parse_feedback(body);
    } catch (const Error& err) {
      return error_reply(err);
    }
    std::uint64_t ticket;
    {
      std::lock_guard<std::mutex> lock(e->queue_mutex);
      ticket = e->next_ticket++;
    }
    std::shared_future<Reply> fut = std::async(std::launch::async, [this, e, items, ticket] {
                                      return run_mutation(*e, items, ticket);
                                    }).share();
    const std::string op = detail::random_token();
    {
      std::lock_guard<std::mutex> lock(ops_mutex_);
      ops_[op] = fut;
      op_owner_[op] = id;
    }
    if (fut.wait_for(timeout.value_or(opt_.refit_timeout)) == std::future_status::ready) {
      forget(op);
      return fut.get();
    }
    return {202,
            {{"v", kSessionSchemaVersion}, {"id", id}, {"status", "pending"}, {"operation", op},
             {"poll", "/sessions/" + id + "/operations/" + op}}};
  }

  /// Result of a queued mutation, or 202 while it is still running.
  Reply operation(const std::string& id, const std::string& op) {
    std::shared_future<Reply> fut;
    {
      std::lock_guard<std::mutex> lock(ops_mutex_);
      const auto it = ops_.find(op);
      if (it == ops_.end() || op_owner_[op] != id) return error_reply(404, "not_found", "unknown operation");
      fut = it->second;
    }
    if (fut.wait_for(std::chrono::milliseconds(0)) != std::future_status::ready)
      return {202, {{"v", kSessionSchemaVersion}, {"id", id}, {"status", "pending"}, {"operation", op}}};
    forget(op);
    return fut.get();
  }

  /// Loads every snapshot in the snapshot directory by replaying its audit log.
  std::size_t recover() {
    if (!opt_.snapshot_dir) return 0;
    std::size_t n = 0;
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(*opt_.snapshot_dir))
      if (f.path().extension() == ".json") files.push_back(f.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f);
      const auto j = nlohmann::json::parse(in);
      auto e = std::make_shared<Entry>();
      e->id = j.at("id").get<std::string>();
      e->created = j.at("created").get<std::string>();
      e->audit = j.at("audit");
      e->core = replay_audit(e->audit, opt_.registry);
      publish(*e, j.at("updated").get<std::string>(), false);
      std::unique_lock lock(map_mutex_);
      sessions_[e->id] = e;
      ++n;
    }
    return n;
  }

  std::vector<std::string> ids() const {
    std::shared_lock lock(map_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, e] : sessions_) out.push_back(id);
    return out;
  }

  const SessionManagerOptions& options() const { return opt_; }

 private:
  struct Entry {
    std::string id;
    std::string created;
    std::unique_ptr<SessionCore> core;
    std::shared_ptr<const SessionSnapshot> snapshot;
    std::mutex queue_mutex;
    std::condition_variable queue_cv;
    std::uint64_t next_ticket = 0;
    std::uint64_t serving = 0;
    mutable std::mutex audit_mutex;
    nlohmann::json audit = nlohmann::json::array();
  };

  std::shared_ptr<Entry> entry(const std::string& id) const {
    std::shared_lock lock(map_mutex_);
    const auto it = sessions_.find(id);
    require(it != sessions_.end(), ErrorCode::not_found, "unknown session");
    return it->second;
  }

  template <typename F>
  Reply guarded(F&& f) const {
    try {
      return f();
    } catch (const Error& e) {
      return error_reply(e);
    }
  }

  static nlohmann::json with_id(nlohmann::json j, const std::string& id) {
    j["id"] = id;
    return j;
  }

  void forget(const std::string& op) {
    std::lock_guard<std::mutex> lock(ops_mutex_);
    ops_.erase(op);
    op_owner_.erase(op);
  }

  Reply run_mutation(Entry& e, const std::vector<FeedbackItem>& items, std::uint64_t ticket) {
    std::unique_lock<std::mutex> lock(e.queue_mutex);
    e.queue_cv.wait(lock, [&] { return e.serving == ticket; });
    Reply reply;
    try {
      reply = apply_locked(e, items);
    } catch (const Error& err) {
      reply = error_reply(err);
    } catch (const std::exception& err) {
      reply = error_reply(500, "internal", err.what());
    }
    ++e.serving;
    e.queue_cv.notify_all();
    return reply;
  }

  Reply apply_locked(Entry& e, const std::vector<FeedbackItem>& items) {
    auto rejected_json = [](const FeedbackReport& rep) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : rep.rejected) arr.push_back({{"instance", r.instance}, {"reason", r.reason}});
      return arr;
    };
    if (e.core->exhausted()) return error_reply(409, "conflict", "session is exhausted");
    const FeedbackReport rep = e.core->apply(items);
    if (rep.accepted.empty()) {
      Reply r = error_reply(409, "conflict", "no instance in the batch was accepted");
      r.body["accepted"] = nlohmann::json::array();
      r.body["rejected"] = rejected_json(rep);
      return r;
    }
    const std::string now = detail::utc_now();
    {
      std::lock_guard<std::mutex> lock(e.audit_mutex);
      e.audit.push_back({{"seq", e.audit.size()},
                         {"op", "feedback"},
                         {"at", now},
                         {"iteration", rep.iteration},
                         {"accepted", to_json(rep.accepted)}});
    }
    publish(e, now);
    const auto snap = std::atomic_load(&e.snapshot);
    nlohmann::json body = snap->explanation;
    body["id"] = e.id;
    body["accepted"] = to_json(rep.accepted);
    body["rejected"] = rejected_json(rep);
    body["metrics"] = snap->metrics["records"];
    return {200, body};
  }

  void publish(Entry& e, const std::string& updated, bool persist = true) {
    auto snap = std::make_shared<SessionSnapshot>();
    snap->id = e.id;
    snap->created = e.created;
    snap->updated = updated;
    snap->iteration = e.core->iteration();
    snap->exhausted = e.core->exhausted();
    snap->explanation = e.core->explanation_json();
    snap->explanation["created"] = e.created;
    snap->explanation["updated"] = updated;
    snap->instances = e.core->instances_json();
    snap->metrics = e.core->metrics_json();
    for (const auto& r : e.core->rules().rules) snap->rule_ids.push_back(r.id);
    std::atomic_store(&e.snapshot, std::shared_ptr<const SessionSnapshot>(std::move(snap)));
    if (persist && opt_.snapshot_dir) {
      nlohmann::json j;
      {
        std::lock_guard<std::mutex> lock(e.audit_mutex);
        j = {{"v", kSessionSchemaVersion}, {"id", e.id}, {"created", e.created}, {"updated", updated},
             {"status", e.core->exhausted() ? "exhausted" : "active"}, {"audit", e.audit}};
      }
      detail::write_atomically(*opt_.snapshot_dir / (e.id + ".json"), j.dump());
    }
  }

  SessionManagerOptions opt_;
  mutable std::shared_mutex map_mutex_;
  std::unordered_map<std::string, std::shared_ptr<Entry>> sessions_;
  std::mutex ops_mutex_;
  std::unordered_map<std::string, std::shared_future<Reply>> ops_;
  std::unordered_map<std::string, std::string> op_owner_;
};

}  // namespace xgl
