#pragma once

// Config-driven experiment runner: datasets x strategies x folds x seeds,
// one resumable per-iteration record per key, and Table-style summaries.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "xgl/core/error.hpp"
#include "xgl/core/rng.hpp"
#include "xgl/data/csv.hpp"
#include "xgl/data/dataset.hpp"
#include "xgl/explain.hpp"
#include "xgl/learners/model.hpp"
#include "xgl/metrics.hpp"
#include "xgl/protocols.hpp"

namespace xgl {

namespace fs = std::filesystem;

struct UuConfig {
  std::size_t clusters = 100;
  std::size_t flipped = 10;
  double weight = 25.0;
};

struct DatasetConfig {
  std::string name;
  std::string path;  // resolved; empty for the synthetic generator
  std::optional<SyntheticParams> synthetic;
  PreprocessSpec preprocess;
  std::optional<UuConfig> uu;
  std::optional<ModelSpec> model;
  std::vector<Strategy> strategies;  // empty = the experiment's list
  std::vector<std::uint64_t> seeds;  // empty = the experiment's list
};

struct ExperimentConfig {
  std::vector<DatasetConfig> datasets;
  std::vector<Strategy> strategies;
  std::size_t folds = 5;
  std::size_t budget = 100;
  double theta = 100.0;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "results";
  std::size_t smoothing_window = 5;
  std::size_t initial_size = 5;
  double beta = 1.0;
  SurrogateParams surrogate;
  RuleF1Mode rule_f1 = RuleF1Mode::within_coverage;
  ScoringScope scoring_scope = ScoringScope::whole_pool;

  const std::vector<Strategy>& strategies_for(const DatasetConfig& d) const {
    return d.strategies.empty() ? strategies : d.strategies;
  }
  const std::vector<std::uint64_t>& seeds_for(const DatasetConfig& d) const { return d.seeds.empty() ? seeds : d.seeds; }

  void validate() const {
    require(!datasets.empty(), ErrorCode::invalid_argument, "config: at least one dataset is required");
    require(!strategies.empty() || std::all_of(datasets.begin(), datasets.end(),
                                               [](const DatasetConfig& d) { return !d.strategies.empty(); }),
            ErrorCode::invalid_argument, "config: at least one strategy is required");
    require(folds >= 2, ErrorCode::invalid_argument, "config: folds must be >= 2");
    require(budget >= 1, ErrorCode::invalid_argument, "config: budget must be >= 1");
    require(std::isfinite(theta) && theta >= 0.0, ErrorCode::invalid_argument, "config: theta must be >= 0");
    require(!seeds.empty(), ErrorCode::invalid_argument, "config: at least one seed is required");
    require(smoothing_window >= 1, ErrorCode::invalid_argument, "config: smoothing_window must be >= 1");
    surrogate.validate();
    std::vector<std::string> names;
    for (const auto& d : datasets) {
      require(!d.name.empty(), ErrorCode::invalid_argument, "config: dataset without a name");
      require(d.synthetic.has_value() != !d.path.empty(), ErrorCode::invalid_argument,
              "config: dataset '" + d.name + "' needs exactly one of 'path' or 'synthetic'");
      require(d.name.find('/') == std::string::npos && d.name.find("__") == std::string::npos,
              ErrorCode::invalid_argument, "config: dataset name '" + d.name + "' may not contain '/' or '__'");
      d.preprocess.validate();
      if (d.model) d.model->validate();
      names.push_back(d.name);
    }
    std::sort(names.begin(), names.end());
    require(std::adjacent_find(names.begin(), names.end()) == names.end(), ErrorCode::invalid_argument,
            "config: duplicate dataset names");
  }
};

/// Default learner per dataset: the SVM settings for synthetic and cancer,
/// boosted trees elsewhere.
inline ModelSpec default_model_for(const std::string& dataset_name) {
  const std::string base = dataset_name.substr(0, dataset_name.find('+'));
  if (base == "synthetic") return ModelSpec::rbf_svm(100.0, 100.0);
  if (base == "cancer" || base == "banknote") return ModelSpec::rbf_svm(0.01, 100.0);
  return ModelSpec::gbt();
}

inline ModelSpec model_for(const DatasetConfig& d) { return d.model ? *d.model : default_model_for(d.name); }

// ---------------------------------------------------------------------------
// Config parsing (YAML, or JSON for the same schema)

namespace detail {

inline nlohmann::json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined: return nullptr;
    case YAML::NodeType::Sequence: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& item : node) arr.push_back(yaml_to_json(item));
      return arr;
    }
    case YAML::NodeType::Map: {
      nlohmann::json obj = nlohmann::json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
    case YAML::NodeType::Scalar: {
      const std::string s = node.Scalar();
      if (node.Tag() == "!") return s;  // quoted
      if (s == "true" || s == "True") return true;
      if (s == "false" || s == "False") return false;
      if (s == "null" || s == "~") return nullptr;
      if (!s.empty() && s.find_first_not_of("+-0123456789") == std::string::npos) {
        try {
          return std::stoll(s);
        } catch (...) {
        }
      }
      if (const auto v = parse_double(s)) return *v;
      return s;
    }
  }
  return nullptr;
}

inline void check_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  require(obj.is_object(), ErrorCode::invalid_argument, "config: '" + where + "' must be a mapping");
  for (const auto& [k, v] : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; });
    require(known, ErrorCode::invalid_argument, "config: unknown key '" + k + "' in " + where);
  }
}

template <typename T>
T get_or(const nlohmann::json& obj, const char* key, T fallback) {
  if (!obj.contains(key) || obj[key].is_null()) return fallback;
  try {
    return obj[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::invalid_argument, std::string("config: bad value for '") + key + "'");
  }
}

inline std::size_t get_count(const nlohmann::json& obj, const char* key, std::size_t fallback) {
  if (!obj.contains(key) || obj[key].is_null()) return fallback;
  require(obj[key].is_number_integer() && obj[key].get<long long>() >= 0, ErrorCode::invalid_argument,
          std::string("config: '") + key + "' must be a non-negative integer");
  return obj[key].get<std::size_t>();
}

inline std::vector<std::uint64_t> parse_seeds(const nlohmann::json& arr) {
  require(arr.is_array() && !arr.empty(), ErrorCode::invalid_argument, "config: 'seeds' must be a non-empty list");
  std::vector<std::uint64_t> out;
  for (const auto& s : arr) {
    require(s.is_number_integer() && s.get<long long>() >= 0, ErrorCode::invalid_argument,
            "config: seeds must be non-negative integers");
    out.push_back(s.get<std::uint64_t>());
  }
  return out;
}

inline std::vector<Strategy> parse_strategies(const nlohmann::json& arr) {
  require(arr.is_array(), ErrorCode::invalid_argument, "config: 'strategies' must be a list");
  std::vector<Strategy> out;
  for (const auto& s : arr) {
    require(s.is_string(), ErrorCode::invalid_argument, "config: strategy names must be strings");
    const Strategy k = parse_strategy(s.get<std::string>());
    require(std::find(out.begin(), out.end(), k) == out.end(), ErrorCode::invalid_argument,
            "config: duplicate strategy '" + s.get<std::string>() + "'");
    out.push_back(k);
  }
  return out;
}

inline Encoding parse_encoding(const std::string& s) {
  if (s == "one_hot") return Encoding::one_hot;
  if (s == "integer_label") return Encoding::integer_label;
  throw Error(ErrorCode::invalid_argument, "config: unknown encoding '" + s + "'");
}
inline Scaling parse_scaling(const std::string& s) {
  if (s == "standardize") return Scaling::standardize;
  if (s == "min_max") return Scaling::min_max;
  if (s == "none") return Scaling::none;
  throw Error(ErrorCode::invalid_argument, "config: unknown scaling '" + s + "'");
}
inline Imputation parse_imputation(const std::string& s) {
  if (s == "mode") return Imputation::mode;
  if (s == "median") return Imputation::median;
  throw Error(ErrorCode::invalid_argument, "config: unknown imputation '" + s + "'");
}

inline PreprocessSpec parse_preprocess(const nlohmann::json& j) {
  PreprocessSpec p;
  if (j.is_null()) return p;
  check_keys(j,
             {"encoding", "scaling", "imputation", "categorical", "label_column", "subsample_fraction",
              "subsample_min_rows", "feature_selection", "overrides"},
             "preprocess");
  if (j.contains("encoding")) p.encoding = parse_encoding(j["encoding"].get<std::string>());
  if (j.contains("scaling")) p.scaling = parse_scaling(j["scaling"].get<std::string>());
  if (j.contains("imputation")) p.imputation = parse_imputation(j["imputation"].get<std::string>());
  p.categorical = get_or<std::vector<std::string>>(j, "categorical", {});
  if (j.contains("label_column")) p.label_column = j["label_column"].get<std::string>();
  if (j.contains("subsample_fraction")) p.subsample_fraction = j["subsample_fraction"].get<double>();
  p.subsample_min_rows = get_count(j, "subsample_min_rows", p.subsample_min_rows);
  if (j.contains("feature_selection")) p.feature_selection = get_count(j, "feature_selection", 0);
  if (j.contains("overrides")) {
    require(j["overrides"].is_object(), ErrorCode::invalid_argument, "config: 'overrides' must map columns");
    for (const auto& [col, o] : j["overrides"].items()) {
      check_keys(o, {"encoding", "scaling", "imputation"}, "overrides." + col);
      if (o.contains("encoding")) p.encoding_overrides[col] = parse_encoding(o["encoding"].get<std::string>());
      if (o.contains("scaling")) p.scaling_overrides[col] = parse_scaling(o["scaling"].get<std::string>());
      if (o.contains("imputation")) p.imputation_overrides[col] = parse_imputation(o["imputation"].get<std::string>());
    }
  }
  return p;
}

}  // namespace detail

/// Parses the config schema from a JSON tree; relative dataset paths resolve
/// against `base_dir`.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j, const fs::path& base_dir = ".") {
  using namespace detail;
  check_keys(j,
             {"datasets", "strategies", "folds", "budget", "theta", "seeds", "output_dir", "smoothing_window",
              "initial_size", "beta", "surrogate", "rule_f1", "scoring_scope"},
             "config");
  ExperimentConfig cfg;
  if (j.contains("strategies")) cfg.strategies = parse_strategies(j["strategies"]);
  cfg.folds = get_count(j, "folds", cfg.folds);
  cfg.budget = get_count(j, "budget", cfg.budget);
  cfg.theta = get_or<double>(j, "theta", cfg.theta);
  cfg.smoothing_window = get_count(j, "smoothing_window", cfg.smoothing_window);
  cfg.initial_size = get_count(j, "initial_size", cfg.initial_size);
  cfg.beta = get_or<double>(j, "beta", cfg.beta);
  if (j.contains("seeds")) cfg.seeds = parse_seeds(j["seeds"]);
  if (j.contains("output_dir")) {
    const fs::path out = j["output_dir"].get<std::string>();
    cfg.output_dir = (out.is_absolute() ? out : base_dir / out).lexically_normal().string();
  }
  if (j.contains("surrogate")) {
    const auto& s = j["surrogate"];
    check_keys(s, {"max_depth", "min_leaf", "max_rules"}, "surrogate");
    cfg.surrogate.max_depth = static_cast<int>(get_count(s, "max_depth", 6));
    cfg.surrogate.min_leaf = get_count(s, "min_leaf", 0);
    cfg.surrogate.max_rules = get_count(s, "max_rules", 30);
  }
  if (j.contains("rule_f1")) cfg.rule_f1 = parse_rule_f1_mode(j["rule_f1"].get<std::string>());
  if (j.contains("scoring_scope")) {
    const auto s = j["scoring_scope"].get<std::string>();
    require(s == "whole_pool" || s == "unlabeled_only", ErrorCode::invalid_argument,
            "config: scoring_scope must be whole_pool or unlabeled_only");
    cfg.scoring_scope = s == "whole_pool" ? ScoringScope::whole_pool : ScoringScope::unlabeled_only;
  }
  require(j.contains("datasets") && j["datasets"].is_array(), ErrorCode::invalid_argument,
          "config: 'datasets' must be a list");
  for (const auto& dj : j["datasets"]) {
    check_keys(dj, {"name", "path", "synthetic", "preprocess", "uu", "model", "strategies", "seeds"}, "datasets[]");
    DatasetConfig d;
    d.name = get_or<std::string>(dj, "name", "");
    if (dj.contains("path")) {
      const fs::path p = dj["path"].get<std::string>();
      d.path = (p.is_absolute() ? p : base_dir / p).lexically_normal().string();
    }
    if (dj.contains("synthetic")) {
      SyntheticParams sp;
      const auto& s = dj["synthetic"];
      if (!s.is_null() && !(s.is_boolean() && s.get<bool>())) {
        check_keys(s, {"n_red", "n_blue", "grid_side", "cluster_std", "exclusion_factor"}, "synthetic");
        sp.n_red = get_count(s, "n_red", sp.n_red);
        sp.n_blue = get_count(s, "n_blue", sp.n_blue);
        sp.grid_side = get_count(s, "grid_side", sp.grid_side);
        sp.cluster_std = get_or<double>(s, "cluster_std", sp.cluster_std);
        sp.exclusion_factor = get_or<double>(s, "exclusion_factor", sp.exclusion_factor);
      }
      d.synthetic = sp;
    }
    d.preprocess = parse_preprocess(dj.contains("preprocess") ? dj["preprocess"] : nlohmann::json());
    if (dj.contains("uu") && !dj["uu"].is_null()) {
      UuConfig u;
      const auto& uj = dj["uu"];
      check_keys(uj, {"clusters", "flipped", "weight"}, "uu");
      u.clusters = get_count(uj, "clusters", u.clusters);
      u.flipped = get_count(uj, "flipped", u.flipped);
      u.weight = get_or<double>(uj, "weight", u.weight);
      d.uu = u;
    }
    if (dj.contains("model")) d.model = model_spec_from_json(dj["model"]);
    if (dj.contains("strategies")) d.strategies = parse_strategies(dj["strategies"]);
    if (dj.contains("seeds")) d.seeds = parse_seeds(dj["seeds"]);
    cfg.datasets.push_back(std::move(d));
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_experiment_config_text(const std::string& text, bool json,
                                                    const fs::path& base_dir = ".") {
  nlohmann::json j;
  if (json) {
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::parse_error, std::string("config: ") + e.what());
    }
  } else {
    try {
      j = detail::yaml_to_json(YAML::Load(text));
    } catch (const YAML::Exception& e) {
      throw Error(ErrorCode::parse_error, std::string("config: ") + e.what());
    }
  }
  return parse_experiment_config(j, base_dir);
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const bool json = fs::path(path).extension() == ".json";
  return parse_experiment_config_text(ss.str(), json, fs::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Records

struct RunKey {
  std::string dataset;
  Strategy strategy = Strategy::random;
  std::size_t fold = 0;
  std::uint64_t seed = 0;

  std::string id() const {
    return dataset + "__" + to_string(strategy) + "__f" + std::to_string(fold) + "__s" + std::to_string(seed);
  }
  friend bool operator==(const RunKey&, const RunKey&) = default;
};

struct IterationRow {
  MetricRecord metrics;
  double test_risk = std::numeric_limits<double>::quiet_NaN();
  IterationTrace trace;
  std::optional<QueryRecord> query;
};

struct RunRecord {
  RunKey key;
  std::vector<IterationRow> rows;
  std::uint64_t final_model_fingerprint = 0;
  double final_test_macro_f1 = 0.0;
  bool exhausted = false;

  MetricSeries series() const {
    MetricSeries s;
    s.dataset = key.dataset;
    s.strategy = to_string(key.strategy);
    s.fold = static_cast<int>(key.fold);
    for (const auto& r : rows) s.records.push_back(r.metrics);
    return s;
  }
};

namespace detail {

inline std::string num(double v) { return std::isnan(v) ? "nan" : format_exact(v); }

inline double parse_num(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  const auto v = parse_double(s);
  require(v.has_value(), ErrorCode::parse_error, "record: bad number '" + s + "'");
  return *v;
}

inline void write_atomically(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::io, "cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    require(out.good(), ErrorCode::io, "write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

}  // namespace detail

inline constexpr const char* kRecordHeader =
    "iteration,test_macro_f1,test_risk,query_macro_f1,nb_experimental,nb_smoothed,nb_formal,fidelity,rule_count,"
    "eligible_rules,first_rule_minimal,fallback,instance_id,predicted_label,true_label,rule_id";

/// Per-iteration CSV with a leading `#` metadata line.
inline std::string record_to_csv(const RunRecord& r) {
  using detail::num;
  std::ostringstream out;
  out << "# dataset=" << r.key.dataset << " strategy=" << to_string(r.key.strategy) << " fold=" << r.key.fold
      << " seed=" << r.key.seed << " final_model_fingerprint=" << r.final_model_fingerprint
      << " final_test_macro_f1=" << num(r.final_test_macro_f1) << " exhausted=" << (r.exhausted ? 1 : 0) << '\n';
  out << kRecordHeader << '\n';
  for (const auto& row : r.rows) {
    const auto& m = row.metrics;
    const auto& t = row.trace;
    out << m.iteration << ',' << num(m.test_macro_f1) << ',' << num(row.test_risk) << ',' << num(m.query_macro_f1)
        << ',' << num(m.nb_experimental) << ',' << num(m.nb_smoothed) << ',' << num(m.nb_formal) << ','
        << num(t.fidelity) << ',' << t.rule_count << ',' << t.eligible_rules << ',' << t.first_rule_minimal << ','
        << (t.fallback ? 1 : 0) << ',';
    if (row.query)
      out << row.query->instance << ',' << row.query->predicted << ',' << row.query->truth << ',' << row.query->rule_id;
    else
      out << ",,,";
    out << '\n';
  }
  return out.str();
}

inline RunRecord record_from_csv(std::istream& in) {
  using detail::parse_num;
  RunRecord r;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line.rfind("# ", 0) == 0, ErrorCode::parse_error,
          "record: missing metadata line");
  std::map<std::string, std::string> meta;
  std::istringstream ms(line.substr(2));
  for (std::string tok; ms >> tok;) {
    const auto eq = tok.find('=');
    require(eq != std::string::npos, ErrorCode::parse_error, "record: bad metadata token '" + tok + "'");
    meta[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  for (const char* k : {"dataset", "strategy", "fold", "seed", "final_model_fingerprint", "final_test_macro_f1", "exhausted"})
    require(meta.count(k) > 0, ErrorCode::parse_error, std::string("record: metadata lacks '") + k + "'");
  r.key = {meta["dataset"], parse_strategy(meta["strategy"]), std::stoul(meta["fold"]), std::stoull(meta["seed"])};
  r.final_model_fingerprint = std::stoull(meta["final_model_fingerprint"]);
  r.final_test_macro_f1 = parse_num(meta["final_test_macro_f1"]);
  r.exhausted = meta["exhausted"] == "1";
  require(static_cast<bool>(std::getline(in, line)) && line == kRecordHeader, ErrorCode::parse_error,
          "record: unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    require(f.size() == 16, ErrorCode::parse_error, "record: expected 16 fields");
    IterationRow row;
    row.metrics.iteration = std::stoi(f[0]);
    row.metrics.test_macro_f1 = parse_num(f[1]);
    row.test_risk = parse_num(f[2]);
    row.metrics.query_macro_f1 = parse_num(f[3]);
    row.metrics.nb_experimental = parse_num(f[4]);
    row.metrics.nb_smoothed = parse_num(f[5]);
    row.metrics.nb_formal = parse_num(f[6]);
    row.trace.iteration = row.metrics.iteration;
    row.trace.test_macro_f1 = row.metrics.test_macro_f1;
    row.trace.test_risk = row.test_risk;
    row.trace.fidelity = parse_num(f[7]);
    row.trace.rule_count = std::stoul(f[8]);
    row.trace.eligible_rules = std::stoul(f[9]);
    row.trace.first_rule_minimal = std::stoi(f[10]);
    row.trace.fallback = f[11] == "1";
    if (!f[12].empty()) {
      row.query = QueryRecord{row.metrics.iteration, std::stoul(f[12]), static_cast<Label>(std::stoi(f[13])),
                              static_cast<Label>(std::stoi(f[14])), std::stoi(f[15])};
    }
    r.rows.push_back(std::move(row));
  }
  return r;
}

inline RunRecord read_record(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open record '" + path.string() + "'");
  return record_from_csv(in);
}

// ---------------------------------------------------------------------------
// Running

/// Builds the dataset for one seed: generator or CSV, then optional UU injection.
inline Dataset build_dataset(const DatasetConfig& d, std::uint64_t seed) {
  Dataset out = d.synthetic ? generate_synthetic(seed, *d.synthetic) : load_and_preprocess(d.path, d.preprocess, seed);
  if (d.uu) out = inject_uu(out, d.uu->clusters, d.uu->flipped, d.uu->weight, seed);
  return out;
}

inline RunRecord record_from_loop(const RunKey& key, const LoopResult& r, std::size_t window) {
  RunRecord rec;
  rec.key = key;
  const auto series = loop_metrics(r, window);
  for (std::size_t t = 0; t < r.trace.size(); ++t) {
    IterationRow row;
    row.metrics = series.records[t];
    row.test_risk = r.trace[t].test_risk;
    row.trace = r.trace[t];
    row.query = r.state.query_log[t];
    rec.rows.push_back(row);
  }
  rec.final_model_fingerprint = r.final_model ? r.final_model->fingerprint() : 0;
  rec.final_test_macro_f1 = r.final_test_macro_f1;
  rec.exhausted = r.exhausted;
  return rec;
}

/// The passive reference: one fit on the whole training fold, reported as a
/// constant series with no narrative.
inline RunRecord passive_record(const RunKey& key, const Dataset& d, const FoldSplit& fold, const ModelSpec& spec,
                                std::size_t budget, std::uint64_t seed) {
  const FoldView view(d, fold);
  std::vector<std::size_t> all(view.pool_x.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const TrainedModel m = fit_on_positions(spec, view, all, derive_seed(seed, "fit", "passive"));
  const auto pred = m.predict(view.test_x);
  const double f1 = macro_f1(pred, view.test_truth), risk = zero_one_risk(pred, view.test_truth);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  RunRecord rec;
  rec.key = key;
  for (std::size_t t = 1; t <= budget; ++t) {
    IterationRow row;
    row.metrics = {static_cast<int>(t), f1, nan, nan, nan, nan};
    row.test_risk = risk;
    row.trace.iteration = static_cast<int>(t);
    row.trace.test_macro_f1 = f1;
    row.trace.test_risk = risk;
    rec.rows.push_back(row);
  }
  rec.final_model_fingerprint = m.fingerprint();
  rec.final_test_macro_f1 = f1;
  return rec;
}

inline std::uint64_t fold_run_seed(std::uint64_t seed, std::size_t fold) { return derive_seed(seed, "fold", fold); }

inline RunRecord run_single(const ExperimentConfig& cfg, const DatasetConfig& dc, const Dataset& d,
                            const FoldSplit& fold, const RunKey& key, double theta) {
  const ModelSpec spec = model_for(dc);
  const std::uint64_t seed = fold_run_seed(key.seed, key.fold);
  if (key.strategy == Strategy::passive) return passive_record(key, d, fold, spec, cfg.budget, seed);
  LoopOptions opt;
  opt.surrogate = cfg.surrogate;
  opt.beta = cfg.beta;
  const auto result = run_loop(d, fold, key.strategy, spec, cfg.budget, theta, seed, opt, cfg.rule_f1, cfg.scoring_scope);
  return record_from_loop(key, result, cfg.smoothing_window);
}

struct Failure {
  RunKey key;
  std::string message;
};

struct RunOptions {
  std::size_t workers = 1;
  bool resume = false;
  bool write = true;
  std::ostream* log = nullptr;
  std::optional<double> theta_override;
};

struct ExperimentResult {
  std::vector<RunRecord> records;  // canonical key order
  std::vector<Failure> failures;
  std::size_t computed = 0;
  std::size_t resumed = 0;
};

/// All keys in canonical order: dataset (config order), seed, fold, strategy.
inline std::vector<RunKey> experiment_keys(const ExperimentConfig& cfg) {
  std::vector<RunKey> keys;
  for (const auto& d : cfg.datasets)
    for (std::uint64_t seed : cfg.seeds_for(d))
      for (std::size_t f = 0; f < cfg.folds; ++f)
        for (Strategy s : cfg.strategies_for(d)) keys.push_back({d.name, s, f, seed});
  return keys;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  const fs::path records_dir = fs::path(cfg.output_dir) / "records";
  if (opt.write) fs::create_directories(records_dir);
  const double theta = opt.theta_override.value_or(cfg.theta);
  const auto keys = experiment_keys(cfg);

  std::mutex io_mutex;
  std::ofstream run_log;
  if (opt.write) run_log.open(fs::path(cfg.output_dir) / "run.log", std::ios::app);
  auto log_line = [&](const std::string& s) {
    std::lock_guard<std::mutex> lock(io_mutex);
    if (run_log.is_open()) run_log << s << '\n' << std::flush;
    if (opt.log) *opt.log << s << '\n' << std::flush;
  };

  struct Prepared {
    std::optional<Dataset> data;
    std::vector<FoldSplit> folds;
    std::string error;
  };
  std::map<std::pair<std::string, std::uint64_t>, Prepared> prepared;
  std::map<std::string, const DatasetConfig*> by_name;
  for (const auto& d : cfg.datasets) by_name[d.name] = &d;

  std::vector<std::optional<RunRecord>> slots(keys.size());
  std::vector<std::size_t> todo;
  ExperimentResult result;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const fs::path path = records_dir / (keys[i].id() + ".csv");
    if (opt.resume && fs::exists(path)) {
      try {
        slots[i] = read_record(path);
        ++result.resumed;
        continue;
      } catch (const std::exception& e) {
        log_line("stale record " + keys[i].id() + ": " + e.what());
      }
    }
    todo.push_back(i);
  }
  for (std::size_t i : todo) {
    const auto k = std::make_pair(keys[i].dataset, keys[i].seed);
    if (prepared.count(k)) continue;
    Prepared& p = prepared[k];
    try {
      p.data = build_dataset(*by_name[keys[i].dataset], keys[i].seed);
      p.folds = stratified_kfold(*p.data, cfg.folds, keys[i].seed, cfg.initial_size);
    } catch (const std::exception& e) {
      p.error = e.what();
    }
  }

  std::vector<std::optional<Failure>> failed(keys.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t j = next++; j < todo.size(); j = next++) {
      const std::size_t i = todo[j];
      const RunKey& key = keys[i];
      try {
        const Prepared& p = prepared.at({key.dataset, key.seed});
        require(p.error.empty(), ErrorCode::invalid_argument, "dataset: " + p.error);
        RunRecord rec = run_single(cfg, *by_name[key.dataset], *p.data, p.folds[key.fold], key, theta);
        if (opt.write) {
          const std::string text = record_to_csv(rec);
          std::lock_guard<std::mutex> lock(io_mutex);
          detail::write_atomically(records_dir / (key.id() + ".csv"), text);
        }
        slots[i] = std::move(rec);
        log_line("done " + key.id());
      } catch (const std::exception& e) {
        failed[i] = Failure{key, e.what()};
        log_line("FAILED " + key.id() + ": " + e.what());
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(opt.workers, todo.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (slots[i]) result.records.push_back(std::move(*slots[i]));
    if (failed[i]) result.failures.push_back(std::move(*failed[i]));
  }
  result.computed = todo.size() - result.failures.size();
  return result;
}

/// Every record under `<dir>/records` (or `dir` itself), sorted by key id.
inline std::vector<RunRecord> load_records(const fs::path& dir) {
  const fs::path records_dir = fs::exists(dir / "records") ? dir / "records" : dir;
  require(fs::is_directory(records_dir), ErrorCode::not_found, "no records directory under '" + dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(records_dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> out;
  for (const auto& f : files) out.push_back(read_record(f));
  return out;
}

// ---------------------------------------------------------------------------
// Summaries

struct SummaryRow {
  std::string dataset;
  Strategy strategy = Strategy::random;
  std::size_t runs = 0;
  double f1_mean = 0.0;
  double f1_std = 0.0;
  double nb_mean = std::numeric_limits<double>::quiet_NaN();
  double nb_formal_mean = std::numeric_limits<double>::quiet_NaN();
  double final_f1_mean = 0.0;
  bool best_f1 = false;
  bool best_nb = false;
};

/// Per (dataset, strategy): F1 mean and std pooled over runs x iterations,
/// NB means over the same cells. Best flags ignore the passive reference;
/// the lowest NB is best. Rows are sorted by dataset name, then strategy.
inline std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records) {
  require(!records.empty(), ErrorCode::invalid_argument, "summarize: no records");
  std::map<std::pair<std::string, int>, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) groups[{r.key.dataset, strategy_rank(r.key.strategy)}].push_back(&r);
  std::vector<SummaryRow> rows;
  for (auto& [k, recs] : groups) {
    // Order within a group must not depend on input order.
    std::sort(recs.begin(), recs.end(), [](const RunRecord* a, const RunRecord* b) {
      return std::tie(a->key.seed, a->key.fold) < std::tie(b->key.seed, b->key.fold);
    });
    SummaryRow row;
    row.dataset = k.first;
    row.strategy = recs.front()->key.strategy;
    row.runs = recs.size();
    std::vector<double> f1, nb, nbf;
    for (const auto* r : recs) {
      row.final_f1_mean += r->final_test_macro_f1;
      for (const auto& it : r->rows) {
        f1.push_back(it.metrics.test_macro_f1);
        if (!std::isnan(it.metrics.nb_experimental)) nb.push_back(it.metrics.nb_experimental);
        if (!std::isnan(it.metrics.nb_formal)) nbf.push_back(it.metrics.nb_formal);
      }
    }
    row.final_f1_mean /= static_cast<double>(recs.size());
    const auto ms = mean_std(f1);
    row.f1_mean = ms.mean;
    row.f1_std = ms.std;
    if (!nb.empty()) row.nb_mean = mean_std(nb).mean;
    if (!nbf.empty()) row.nb_formal_mean = mean_std(nbf).mean;
    rows.push_back(row);
  }
  std::map<std::string, std::pair<double, double>> best;  // dataset -> (max f1, min nb)
  for (const auto& r : rows) {
    if (r.strategy == Strategy::passive) continue;
    auto [it, fresh] = best.emplace(r.dataset, std::make_pair(r.f1_mean, std::isnan(r.nb_mean) ? INFINITY : r.nb_mean));
    if (!fresh) {
      it->second.first = std::max(it->second.first, r.f1_mean);
      if (!std::isnan(r.nb_mean)) it->second.second = std::min(it->second.second, r.nb_mean);
    }
  }
  for (auto& r : rows) {
    if (r.strategy == Strategy::passive) continue;
    r.best_f1 = r.f1_mean == best[r.dataset].first;
    r.best_nb = !std::isnan(r.nb_mean) && r.nb_mean == best[r.dataset].second;
  }
  return rows;
}

inline const SummaryRow* find_row(const std::vector<SummaryRow>& rows, const std::string& dataset, Strategy s) {
  for (const auto& r : rows)
    if (r.dataset == dataset && r.strategy == s) return &r;
  return nullptr;
}

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "dataset,strategy,runs,f1_mean,f1_std,nb_mean,nb_formal_mean,final_f1_mean,best_f1,best_nb\n";
  for (const auto& r : rows)
    out << r.dataset << ',' << to_string(r.strategy) << ',' << r.runs << ',' << format_fixed(r.f1_mean) << ','
        << format_fixed(r.f1_std) << ',' << format_fixed(r.nb_mean) << ',' << format_fixed(r.nb_formal_mean) << ','
        << format_fixed(r.final_f1_mean) << ',' << (r.best_f1 ? 1 : 0) << ',' << (r.best_nb ? 1 : 0) << '\n';
}

/// Mean curves per (dataset, strategy, iteration) across runs, for plotting.
inline void write_curves_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  std::map<std::tuple<std::string, int, int>, std::array<double, 4>> acc;  // f1, nb_smoothed, count, nb count
  for (const auto& r : records)
    for (const auto& it : r.rows) {
      auto& a = acc[{r.key.dataset, strategy_rank(r.key.strategy), it.metrics.iteration}];
      a[0] += it.metrics.test_macro_f1;
      a[2] += 1;
      if (!std::isnan(it.metrics.nb_smoothed)) {
        a[1] += it.metrics.nb_smoothed;
        a[3] += 1;
      }
    }
  out << "dataset,strategy,iteration,test_f1_mean,nb_smoothed_mean\n";
  for (const auto& [k, a] : acc)
    out << std::get<0>(k) << ',' << to_string(kAllStrategies[std::get<1>(k)]) << ',' << std::get<2>(k) << ','
        << format_fixed(a[0] / a[2]) << ',' << format_fixed(a[3] > 0 ? a[1] / a[3] : NAN) << '\n';
}

/// Writes summary.csv and curves.csv next to the records.
inline std::vector<SummaryRow> write_summaries(const fs::path& dir, const std::vector<RunRecord>& records) {
  fs::create_directories(dir);
  const auto rows = summarize(records);
  std::ostringstream s, c;
  write_summary_csv(s, rows);
  write_curves_csv(c, records);
  detail::write_atomically(dir / "summary.csv", s.str());
  detail::write_atomically(dir / "curves.csv", c.str());
  return rows;
}

// ---------------------------------------------------------------------------
// Theta sweep

struct ThetaSweepResult {
  std::vector<double> thetas;
  std::vector<ExperimentResult> runs;  // parallel to thetas
};

/// XGL only, one sub-directory per theta (`theta_<value>`).
inline ThetaSweepResult theta_sweep(const ExperimentConfig& base, const std::vector<double>& thetas,
                                    const RunOptions& opt = {}) {
  require(!thetas.empty(), ErrorCode::invalid_argument, "theta_sweep: no theta values");
  ThetaSweepResult out;
  for (double theta : thetas) {
    require(std::isfinite(theta) && theta >= 0.0, ErrorCode::invalid_argument, "theta_sweep: theta must be >= 0");
    ExperimentConfig cfg = base;
    cfg.theta = theta;
    cfg.strategies = {Strategy::xgl};
    for (auto& d : cfg.datasets) d.strategies.clear();
    cfg.output_dir = (fs::path(base.output_dir) / ("theta_" + format_exact(theta))).string();
    RunOptions o = opt;
    o.theta_override.reset();
    out.thetas.push_back(theta);
    out.runs.push_back(run_experiment(cfg, o));
  }
  return out;
}

/// Fraction of XGL selections whose first rule drawn had the minimal F1.
inline double minimal_rule_rate(const std::vector<RunRecord>& records) {
  double hits = 0, total = 0;
  for (const auto& r : records)
    for (const auto& it : r.rows)
      if (it.trace.first_rule_minimal >= 0) {
        hits += it.trace.first_rule_minimal;
        total += 1;
      }
  return total > 0 ? hits / total : std::numeric_limits<double>::quiet_NaN();
}

inline void write_theta_sweep_csv(std::ostream& out, const ThetaSweepResult& sweep) {
  out << "theta,dataset,runs,f1_mean,nb_mean,minimal_rule_rate\n";
  for (std::size_t i = 0; i < sweep.thetas.size(); ++i) {
    if (sweep.runs[i].records.empty()) continue;
    std::map<std::string, std::vector<RunRecord>> by_dataset;
    for (const auto& r : sweep.runs[i].records) by_dataset[r.key.dataset].push_back(r);
    for (const auto& [name, recs] : by_dataset) {
      const auto row = summarize(recs).front();
      out << format_exact(sweep.thetas[i]) << ',' << name << ',' << row.runs << ',' << format_fixed(row.f1_mean) << ','
          << format_fixed(row.nb_mean) << ',' << format_fixed(minimal_rule_rate(recs)) << '\n';
    }
  }
}

inline std::vector<double> parse_theta_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& tok : split_csv_line(s)) {
    const auto v = parse_double(tok);
    require(v.has_value(), ErrorCode::invalid_argument, "bad theta value '" + tok + "'");
    out.push_back(*v);
  }
  return out;
}

}  // namespace xgl
