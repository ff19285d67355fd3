#pragma once

// Classification quality and narrative-bias measurements.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "xgl/core/error.hpp"
#include "xgl/core/matrix.hpp"

namespace xgl {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline ConfusionCounts confusion(std::span<const Label> predictions, std::span<const Label> truth,
                                 Label positive) {
  require(predictions.size() == truth.size(), ErrorCode::dimension_mismatch,
          "confusion: prediction/truth length mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predictions[i] == positive;
    const bool t = truth[i] == positive;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// F1 of one class. A class absent from both truth and prediction scores 1.
inline double class_f1(const ConfusionCounts& c) {
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

/// Unweighted mean of the two per-class F1 scores.
inline double macro_f1(std::span<const Label> predictions, std::span<const Label> truth) {
  require(!truth.empty(), ErrorCode::invalid_argument, "macro_f1: empty input");
  const double f1_pos = class_f1(confusion(predictions, truth, 1));
  const double f1_neg = class_f1(confusion(predictions, truth, 0));
  return 0.5 * (f1_pos + f1_neg);
}

inline double zero_one_risk(std::span<const Label> predictions, std::span<const Label> truth) {
  require(predictions.size() == truth.size(), ErrorCode::dimension_mismatch,
          "zero_one_risk: length mismatch");
  require(!truth.empty(), ErrorCode::invalid_argument, "zero_one_risk: empty input");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) wrong += predictions[i] != truth[i];
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

/// One interaction step as seen by the supervisor: the model's prediction on
/// the query was recorded before its label was revealed.
struct QueryRecord {
  int iteration = 0;
  std::size_t instance = 0;  // dataset row id
  Label predicted = 0;
  Label truth = 0;
  int rule_id = -1;
};

/// Cumulative query macro-F1 after each iteration: entry t-1 covers queries 1..t.
inline std::vector<double> query_f1_series(std::span<const QueryRecord> log) {
  std::vector<double> out;
  out.reserve(log.size());
  std::vector<Label> pred, truth;
  for (const auto& q : log) {
    pred.push_back(q.predicted);
    truth.push_back(q.truth);
    out.push_back(macro_f1(pred, truth));
  }
  return out;
}

/// Trailing mean over the last `window` entries (fewer at the start).
inline std::vector<double> smooth_trailing(std::span<const double> series, std::size_t window) {
  require(window >= 1, ErrorCode::invalid_argument, "smooth_trailing: window must be >= 1");
  std::vector<double> out(series.size());
  for (std::size_t t = 0; t < series.size(); ++t) {
    const std::size_t lo = t + 1 >= window ? t + 1 - window : 0;
    double s = 0.0;
    for (std::size_t k = lo; k <= t; ++k) s += series[k];
    out[t] = s / static_cast<double>(t + 1 - lo);
  }
  return out;
}

/// Query-vs-test F1 gap at iteration t (1-based), positive when the queries
/// oversell the model. The query series is smoothed over `window` trailing
/// iterations before taking the difference.
inline double narrative_bias_experimental(std::span<const QueryRecord> log, std::size_t t,
                                          double test_f1_at_t, std::size_t window) {
  require(!log.empty(), ErrorCode::invalid_argument, "narrative_bias_experimental: empty query log");
  require(t >= 1 && t <= log.size(), ErrorCode::invalid_argument,
          "narrative_bias_experimental: iteration out of range");
  const auto q = query_f1_series(log.subspan(0, t));
  const auto smoothed = smooth_trailing(q, window);
  return smoothed.back() - test_f1_at_t;
}

/// Mean query 0-1 loss minus the empirical test risk of the final model.
/// Note the orientation: a flattering narrative on a bad model is negative.
inline double narrative_bias_formal(std::span<const int> query_losses,
                                    std::span<const Label> test_predictions,
                                    std::span<const Label> test_truth) {
  require(!query_losses.empty(), ErrorCode::invalid_argument, "narrative_bias_formal: no queries");
  double mean_loss = 0.0;
  for (int l : query_losses) mean_loss += l;
  mean_loss /= static_cast<double>(query_losses.size());
  return mean_loss - zero_one_risk(test_predictions, test_truth);
}

struct MetricRecord {
  int iteration = 0;
  double test_macro_f1 = 0.0;
  double query_macro_f1 = 0.0;
  double nb_experimental = 0.0;  // raw query F1 minus test F1
  double nb_smoothed = 0.0;      // smoothed query F1 minus test F1 (curves)
  double nb_formal = 0.0;
};

struct MetricSeries {
  std::string dataset;
  std::string strategy;
  int fold = 0;
  std::vector<MetricRecord> records;

  bool valid_ranges() const {
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.iteration != static_cast<int>(i) + 1) return false;
      auto in = [](double v, double lo, double hi) { return std::isnan(v) || (v >= lo && v <= hi); };
      if (!in(r.test_macro_f1, 0, 1) || !in(r.query_macro_f1, 0, 1)) return false;
      if (!in(r.nb_experimental, -1, 1) || !in(r.nb_smoothed, -1, 1) || !in(r.nb_formal, -1, 1)) return false;
    }
    return true;
  }
};

/// Builds the per-iteration series from a query log and the test F1 / risk
/// of the model that was live at each iteration.
inline MetricSeries build_series(std::span<const QueryRecord> log, std::span<const double> test_f1,
                                 std::span<const double> test_risk, std::size_t window) {
  require(log.size() == test_f1.size() && log.size() == test_risk.size(), ErrorCode::dimension_mismatch,
          "build_series: log and test series differ in length");
  MetricSeries s;
  const auto q = query_f1_series(log);
  const auto qs = smooth_trailing(q, window);
  double loss_sum = 0.0;
  for (std::size_t t = 0; t < log.size(); ++t) {
    loss_sum += log[t].predicted != log[t].truth;
    MetricRecord r;
    r.iteration = static_cast<int>(t) + 1;
    r.test_macro_f1 = test_f1[t];
    r.query_macro_f1 = q[t];
    r.nb_experimental = q[t] - test_f1[t];
    r.nb_smoothed = qs[t] - test_f1[t];
    r.nb_formal = loss_sum / static_cast<double>(t + 1) - test_risk[t];
    s.records.push_back(r);
  }
  return s;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd out;
  if (v.empty()) return {std::nan(""), std::nan("")};
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(v.size()));
  return out;
}

}  // namespace xgl
