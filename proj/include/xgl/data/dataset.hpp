#pragma once

// Datasets: the synthetic grid task, CSV ingestion and preprocessing,
// unknown-unknown injection and stratified cross-validation folds.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "xgl/core/error.hpp"
#include "xgl/core/matrix.hpp"
#include "xgl/core/rng.hpp"
#include "xgl/data/csv.hpp"
#include "xgl/data/kmeans.hpp"
#include "xgl/learners/decision_tree.hpp"

namespace xgl {

enum class FeatureKind { numeric, categorical_encoded };

struct FeatureMeta {
  std::string name;
  FeatureKind kind = FeatureKind::numeric;
  friend bool operator==(const FeatureMeta&, const FeatureMeta&) = default;
};

struct Dataset {
  Matrix features;
  std::vector<Label> labels;
  std::vector<double> weights;
  std::vector<FeatureMeta> meta;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t n_features() const { return features.cols(); }

  std::size_t count(Label l) const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l)); }

  void validate() const {
    require(features.rows() == labels.size() && weights.size() == labels.size(), ErrorCode::dimension_mismatch,
            "Dataset: features, labels and weights differ in row count");
    require(meta.size() == features.cols(), ErrorCode::dimension_mismatch, "Dataset: feature metadata width mismatch");
    for (Label l : labels) require(l == 0 || l == 1, ErrorCode::invalid_argument, "Dataset: labels must be 0/1");
    for (double w : weights) require(w > 0.0, ErrorCode::invalid_argument, "Dataset: weights must be positive");
    for (double v : features.data()) require(std::isfinite(v), ErrorCode::invalid_argument, "Dataset: non-finite feature");
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset d;
    d.features = features.select_rows(rows);
    d.labels = gather<Label>(labels, rows);
    d.weights = gather<double>(weights, rows);
    d.meta = meta;
    d.provenance = provenance;
    return d;
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a(std::string_view(reinterpret_cast<const char*>(features.data().data()),
                                             features.data().size() * sizeof(double)));
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(labels.data()), labels.size() * sizeof(Label)), h);
    return fnv1a(std::string_view(reinterpret_cast<const char*>(weights.data()), weights.size() * sizeof(double)), h);
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// CSV with one column per feature followed by `label` and `weight`.
inline void export_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::io, "cannot write '" + path + "'");
  for (const auto& m : d.meta) out << m.name << ',';
  out << "label,weight\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (double v : d.features.row(i)) out << format_exact(v) << ',';
    out << d.labels[i] << ',' << format_exact(d.weights[i]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic task

struct SyntheticParams {
  std::size_t n_red = 100;
  std::size_t n_blue = 941;
  std::size_t grid_side = 5;
  double cluster_std = 0.02;
  double exclusion_factor = 3.0;  // exclusion radius = factor * cluster_std

  double exclusion_radius() const { return exclusion_factor * cluster_std; }
};

/// Cluster centers at the cell midpoints of a grid over the unit square.
inline std::vector<std::array<double, 2>> grid_centers(std::size_t grid_side) {
  std::vector<std::array<double, 2>> c;
  for (std::size_t i = 0; i < grid_side; ++i)
    for (std::size_t j = 0; j < grid_side; ++j)
      c.push_back({(static_cast<double>(i) + 0.5) / static_cast<double>(grid_side),
                   (static_cast<double>(j) + 0.5) / static_cast<double>(grid_side)});
  return c;
}

/// Red (label 1) points from Gaussian clusters on a grid, truncated to the
/// exclusion disc of their center; blue (label 0) points uniform on the unit
/// square outside every disc.
inline Dataset generate_synthetic(std::uint64_t seed, const SyntheticParams& p = {}) {
  require(p.grid_side >= 1, ErrorCode::invalid_argument, "synthetic: grid_side must be >= 1");
  const std::size_t n_clusters = p.grid_side * p.grid_side;
  require(p.n_red % n_clusters == 0, ErrorCode::invalid_argument,
          "synthetic: n_red must be divisible by grid_side^2");
  const double spacing = 1.0 / static_cast<double>(p.grid_side);
  require(p.cluster_std > 0.0 && p.cluster_std < spacing / 2.0, ErrorCode::invalid_argument,
          "synthetic: cluster_std must be in (0, half the grid spacing)");
  require(p.exclusion_radius() < spacing / 2.0, ErrorCode::invalid_argument,
          "synthetic: exclusion radius must stay inside a grid cell");

  Rng rng(seed);
  const auto centers = grid_centers(p.grid_side);
  const double r2 = p.exclusion_radius() * p.exclusion_radius();
  Dataset d;
  d.features = Matrix(0, 2);
  d.meta = {{"x0", FeatureKind::numeric}, {"x1", FeatureKind::numeric}};
  d.provenance = "synthetic(seed=" + std::to_string(seed) + ")";

  const std::size_t per_cluster = p.n_red / n_clusters;
  for (const auto& c : centers) {
    for (std::size_t k = 0; k < per_cluster; ++k) {
      std::array<double, 2> pt;
      for (;;) {
        pt = {c[0] + p.cluster_std * rng.normal(), c[1] + p.cluster_std * rng.normal()};
        const double dx = pt[0] - c[0], dy = pt[1] - c[1];
        if (dx * dx + dy * dy <= r2) break;
      }
      pt = {std::clamp(pt[0], 0.0, 1.0), std::clamp(pt[1], 0.0, 1.0)};
      d.features.append_row(pt);
      d.labels.push_back(1);
    }
  }
  for (std::size_t k = 0; k < p.n_blue; ++k) {
    std::array<double, 2> pt;
    for (;;) {
      pt = {rng.uniform(), rng.uniform()};
      bool inside = false;
      for (const auto& c : centers) {
        const double dx = pt[0] - c[0], dy = pt[1] - c[1];
        if (dx * dx + dy * dy <= r2) {
          inside = true;
          break;
        }
      }
      if (!inside) break;
    }
    d.features.append_row(pt);
    d.labels.push_back(0);
  }
  d.weights.assign(d.labels.size(), 1.0);
  return d;
}

// ---------------------------------------------------------------------------
// CSV preprocessing

enum class Encoding { one_hot, integer_label };
enum class Scaling { standardize, min_max, none };
enum class Imputation { mode, median };

struct PreprocessSpec {
  Encoding encoding = Encoding::one_hot;
  Scaling scaling = Scaling::standardize;
  Imputation imputation = Imputation::median;
  std::map<std::string, Encoding> encoding_overrides;
  std::map<std::string, Scaling> scaling_overrides;
  std::map<std::string, Imputation> imputation_overrides;
  /// Columns forced categorical; columns with non-numeric values are categorical anyway.
  std::vector<std::string> categorical;
  std::optional<std::string> label_column;  // default: last column
  std::optional<double> subsample_fraction;
  std::size_t subsample_min_rows = 5000;  // subsample only tables larger than this
  std::optional<std::size_t> feature_selection;

  void validate() const {
    if (subsample_fraction)
      require(*subsample_fraction > 0.0 && *subsample_fraction <= 1.0, ErrorCode::invalid_argument,
              "preprocess: subsample_fraction must be in (0, 1]");
    if (feature_selection)
      require(*feature_selection >= 1, ErrorCode::invalid_argument, "preprocess: feature_selection must be >= 1");
  }
};

namespace detail {

struct ColumnPlan {
  std::size_t source;
  std::string name;
  bool categorical;
};

inline std::vector<std::string> sorted_categories(const std::vector<std::string>& values) {
  std::set<std::string> distinct(values.begin(), values.end());
  std::vector<std::string> cats(distinct.begin(), distinct.end());
  const bool numeric = std::all_of(cats.begin(), cats.end(), [](const std::string& s) { return parse_double(s).has_value(); });
  if (numeric)
    std::stable_sort(cats.begin(), cats.end(),
                     [](const std::string& a, const std::string& b) { return *parse_double(a) < *parse_double(b); });
  return cats;
}

inline std::string impute_value(const std::vector<std::string>& column, bool categorical, Imputation how) {
  std::vector<std::string> present;
  for (const auto& v : column)
    if (!is_missing(v)) present.push_back(v);
  require(!present.empty(), ErrorCode::invalid_argument, "preprocess: column has no observed values");
  const bool numeric = std::all_of(present.begin(), present.end(), [](const std::string& s) { return parse_double(s).has_value(); });
  if (how == Imputation::median && numeric) {
    std::vector<double> v;
    for (const auto& s : present) v.push_back(*parse_double(s));
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    // Categorical codes take the lower middle so the fill is an observed code.
    const double med = (v.size() % 2 == 1 || categorical) ? v[(v.size() - 1) / 2] : 0.5 * (v[m - 1] + v[m]);
    return format_exact(med);
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& s : present) ++counts[s];
  const auto cats = sorted_categories(present);
  std::string best = cats.front();
  for (const auto& c : cats)
    if (counts[c] > counts[best]) best = c;
  return best;
}

}  // namespace detail

/// Parses, subsamples, imputes, encodes, scales and optionally selects
/// features. Rows keep their file order.
inline Dataset preprocess_table(const CsvTable& table, const PreprocessSpec& spec, std::uint64_t seed,
                                const std::string& provenance = "") {
  spec.validate();
  require(table.header.size() >= 2, ErrorCode::parse_error, "preprocess: need at least one feature and a label");
  std::size_t label_col = table.header.size() - 1;
  if (spec.label_column) {
    const auto c = table.column(*spec.label_column);
    require(c.has_value(), ErrorCode::invalid_argument, "preprocess: label column '" + *spec.label_column + "' missing");
    label_col = *c;
  }

  std::vector<Label> labels;
  for (const auto& row : table.rows) {
    const auto v = parse_double(row[label_col]);
    require(v && (*v == 0.0 || *v == 1.0), ErrorCode::invalid_argument,
            "preprocess: label column must be binary 0/1, got '" + row[label_col] + "'");
    labels.push_back(static_cast<Label>(*v));
  }

  // Stratified subsample of rows.
  std::vector<std::size_t> keep(table.rows.size());
  std::iota(keep.begin(), keep.end(), 0);
  if (spec.subsample_fraction && table.rows.size() > spec.subsample_min_rows && *spec.subsample_fraction < 1.0) {
    Rng rng(derive_seed(seed, "subsample"));
    std::vector<std::size_t> kept;
    for (Label cls : {0, 1}) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == cls) members.push_back(i);
      if (members.empty()) continue;
      rng.shuffle(members);
      const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(*spec.subsample_fraction * members.size())));
      kept.insert(kept.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(std::min(n, members.size())));
    }
    std::sort(kept.begin(), kept.end());
    keep = std::move(kept);
  }
  require(!keep.empty(), ErrorCode::invalid_argument, "preprocess: dataset is empty");

  std::vector<detail::ColumnPlan> plan;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == label_col) continue;
    bool categorical = std::find(spec.categorical.begin(), spec.categorical.end(), table.header[c]) != spec.categorical.end();
    for (std::size_t r : keep)
      if (!is_missing(table.rows[r][c]) && !parse_double(table.rows[r][c])) categorical = true;
    plan.push_back({c, table.header[c], categorical});
  }

  Dataset d;
  d.provenance = provenance;
  std::vector<std::vector<double>> columns;
  for (const auto& col : plan) {
    std::vector<std::string> values;
    for (std::size_t r : keep) values.push_back(table.rows[r][col.source]);
    auto imp = spec.imputation;
    if (auto it = spec.imputation_overrides.find(col.name); it != spec.imputation_overrides.end()) imp = it->second;
    if (std::any_of(values.begin(), values.end(), [](const std::string& v) { return is_missing(v); })) {
      const std::string fill = detail::impute_value(values, col.categorical, imp);
      for (auto& v : values)
        if (is_missing(v)) v = fill;
    }

    if (col.categorical) {
      auto enc = spec.encoding;
      if (auto it = spec.encoding_overrides.find(col.name); it != spec.encoding_overrides.end()) enc = it->second;
      const auto cats = detail::sorted_categories(values);
      if (enc == Encoding::one_hot) {
        for (const auto& cat : cats) {
          std::vector<double> onehot;
          for (const auto& v : values) onehot.push_back(v == cat ? 1.0 : 0.0);
          columns.push_back(std::move(onehot));
          d.meta.push_back({col.name + "=" + cat, FeatureKind::categorical_encoded});
        }
      } else {
        std::vector<double> codes;
        for (const auto& v : values)
          codes.push_back(static_cast<double>(std::find(cats.begin(), cats.end(), v) - cats.begin()));
        columns.push_back(std::move(codes));
        d.meta.push_back({col.name, FeatureKind::categorical_encoded});
      }
      continue;
    }

    std::vector<double> x;
    for (const auto& v : values) x.push_back(*parse_double(v));
    auto scaling = spec.scaling;
    if (auto it = spec.scaling_overrides.find(col.name); it != spec.scaling_overrides.end()) scaling = it->second;
    if (scaling == Scaling::standardize) {
      double mean = 0.0;
      for (double v : x) mean += v;
      mean /= static_cast<double>(x.size());
      double var = 0.0;
      for (double v : x) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / static_cast<double>(x.size()));
      for (double& v : x) v = sd > 0.0 ? (v - mean) / sd : v - mean;
    } else if (scaling == Scaling::min_max) {
      const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
      const double a = *lo, range = *hi - *lo;
      for (double& v : x) v = range > 0.0 ? (v - a) / range : 0.0;
    }
    columns.push_back(std::move(x));
    d.meta.push_back({col.name, FeatureKind::numeric});
  }

  d.features = Matrix(keep.size(), columns.size());
  for (std::size_t r = 0; r < keep.size(); ++r)
    for (std::size_t c = 0; c < columns.size(); ++c) d.features(r, c) = columns[c][r];
  for (std::size_t r : keep) d.labels.push_back(labels[r]);
  d.weights.assign(d.labels.size(), 1.0);

  if (spec.feature_selection) {
    require(*spec.feature_selection <= d.n_features(), ErrorCode::invalid_argument,
            "preprocess: feature_selection exceeds the column count");
    // Top-k columns by impurity importance of a tree fit on all rows.
    const auto tree = DecisionTree::fit_classifier(d.features, d.labels, d.weights, {8, 1, 0});
    const auto imp = tree.feature_importances();
    std::vector<std::size_t> order(imp.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return imp[a] > imp[b]; });
    order.resize(*spec.feature_selection);
    std::sort(order.begin(), order.end());
    d.features = d.features.select_cols(order);
    std::vector<FeatureMeta> meta;
    for (std::size_t c : order) meta.push_back(d.meta[c]);
    d.meta = std::move(meta);
  }
  d.validate();
  return d;
}

inline Dataset load_and_preprocess(const std::string& path, const PreprocessSpec& spec, std::uint64_t seed) {
  return preprocess_table(read_csv(path), spec, seed, path);
}

// ---------------------------------------------------------------------------
// Unknown-unknown injection

struct UuInjection {
  Dataset data;
  KMeansResult clustering;
  std::vector<std::size_t> flipped_clusters;
  std::vector<std::size_t> flipped_rows;
};

/// Clusters the features with k-means, flips the labels of `n_flip` random
/// non-empty clusters and gives their members `flip_weight`.
inline UuInjection inject_uu_detailed(const Dataset& d, std::size_t k, std::size_t n_flip, double flip_weight,
                                      std::uint64_t seed) {
  require(k >= 1 && k <= d.size(), ErrorCode::invalid_argument, "inject_uu: need 1 <= k <= rows");
  require(n_flip <= k, ErrorCode::invalid_argument, "inject_uu: n_flip must be <= k");
  require(flip_weight > 0.0, ErrorCode::invalid_argument, "inject_uu: flip_weight must be positive");
  UuInjection out;
  out.data = d;
  if (n_flip == 0) return out;

  out.clustering = kmeans(d.features, {k, 100, 1e-4}, derive_seed(seed, "kmeans"));
  const auto members = out.clustering.members();
  std::vector<std::size_t> candidates;
  for (std::size_t c = 0; c < k; ++c)
    if (!members[c].empty()) candidates.push_back(c);
  require(candidates.size() >= n_flip, ErrorCode::invalid_argument, "inject_uu: fewer non-empty clusters than n_flip");
  Rng rng(derive_seed(seed, "flip"));
  rng.shuffle(candidates);
  out.flipped_clusters.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n_flip));
  std::sort(out.flipped_clusters.begin(), out.flipped_clusters.end());
  for (std::size_t c : out.flipped_clusters) {
    for (std::size_t r : members[c]) {
      out.data.labels[r] = 1 - out.data.labels[r];
      out.data.weights[r] = flip_weight;
      out.flipped_rows.push_back(r);
    }
  }
  std::sort(out.flipped_rows.begin(), out.flipped_rows.end());
  out.data.provenance += "+uu";
  return out;
}

inline Dataset inject_uu(const Dataset& d, std::size_t k, std::size_t n_flip, double flip_weight, std::uint64_t seed) {
  return inject_uu_detailed(d, k, n_flip, flip_weight, seed).data;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldSplit {
  int fold_index = 0;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  std::vector<std::size_t> initial_labeled;  // subset of train_indices
};

/// Draws `size` rows from a two-class pool, uniformly among all subsets with
/// at least `min_per_class` rows of each class.
inline std::vector<std::size_t> sample_initial_set(const std::vector<std::size_t>& pool, std::span<const Label> labels,
                                                   std::size_t size, std::size_t min_per_class, Rng& rng) {
  std::vector<std::size_t> by_class[2];
  for (std::size_t r : pool) by_class[labels[r]].push_back(r);
  const auto lchoose = [](std::size_t n, std::size_t k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
  };
  std::vector<std::size_t> options;
  std::vector<double> logw;
  for (std::size_t pos = min_per_class; pos + min_per_class <= size; ++pos) {
    const std::size_t neg = size - pos;
    if (pos > by_class[1].size() || neg > by_class[0].size()) continue;
    options.push_back(pos);
    logw.push_back(lchoose(by_class[1].size(), pos) + lchoose(by_class[0].size(), neg));
  }
  require(!options.empty(), ErrorCode::invalid_argument,
          "initial set: not enough examples per class for the constraint");
  const double top = *std::max_element(logw.begin(), logw.end());
  std::vector<double> w;
  for (double l : logw) w.push_back(std::exp(l - top));
  const std::size_t pos = options[rng.categorical(w)];
  std::vector<std::size_t> out;
  for (Label cls : {1, 0}) {
    auto members = by_class[cls];
    rng.shuffle(members);
    const std::size_t take = cls == 1 ? pos : size - pos;
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<FoldSplit> stratified_kfold(const Dataset& d, std::size_t k, std::uint64_t seed,
                                               std::size_t initial_size = 5, std::size_t min_per_class = 2) {
  require(k >= 2, ErrorCode::invalid_argument, "stratified_kfold: need k >= 2");
  Rng rng(derive_seed(seed, "kfold"));
  std::vector<std::vector<std::size_t>> test(k);
  std::size_t offset = 0;
  for (Label cls : {1, 0}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.labels[i] == cls) members.push_back(i);
    require(members.size() >= k, ErrorCode::invalid_argument,
            "stratified_kfold: class " + std::to_string(cls) + " has fewer members than folds");
    rng.shuffle(members);
    // Deal round-robin, continuing where the previous class stopped so fold sizes stay balanced.
    for (std::size_t i = 0; i < members.size(); ++i) test[(offset + i) % k].push_back(members[i]);
    offset = (offset + members.size()) % k;
  }
  std::vector<FoldSplit> folds;
  for (std::size_t f = 0; f < k; ++f) {
    FoldSplit s;
    s.fold_index = static_cast<int>(f);
    s.test_indices = test[f];
    std::sort(s.test_indices.begin(), s.test_indices.end());
    std::vector<char> in_test(d.size(), 0);
    for (std::size_t r : s.test_indices) in_test[r] = 1;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!in_test[i]) s.train_indices.push_back(i);
    Rng init_rng(derive_seed(seed, "initial", f));
    s.initial_labeled = sample_initial_set(s.train_indices, d.labels, initial_size, min_per_class, init_rng);
    folds.push_back(std::move(s));
  }
  return folds;
}

}  // namespace xgl
