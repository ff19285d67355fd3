#pragma once

// Lloyd's k-means with k-means++ seeding.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "xgl/core/error.hpp"
#include "xgl/core/matrix.hpp"
#include "xgl/core/rng.hpp"

namespace xgl {

struct KMeansParams {
  std::size_t k = 8;
  std::size_t max_iterations = 100;
  double tolerance = 1e-4;  // relative inertia improvement
};

struct KMeansResult {
  Matrix centers;
  std::vector<std::size_t> assignment;
  double inertia = 0.0;
  std::size_t iterations = 0;

  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> out(centers.rows());
    for (std::size_t i = 0; i < assignment.size(); ++i) out[assignment[i]].push_back(i);
    return out;
  }
};

namespace detail {
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double t = a[j] - b[j];
    d += t * t;
  }
  return d;
}
}  // namespace detail

inline KMeansResult kmeans(const Matrix& x, const KMeansParams& params, std::uint64_t seed) {
  const std::size_t n = x.rows();
  const std::size_t k = params.k;
  require(k >= 1 && k <= n, ErrorCode::invalid_argument, "kmeans: need 1 <= k <= rows");
  Rng rng(seed);

  // k-means++ seeding
  KMeansResult r;
  r.centers = Matrix(k, x.cols());
  std::vector<char> chosen(n, 0);
  std::size_t first = rng.index(n);
  chosen[first] = 1;
  std::copy(x.row(first).begin(), x.row(first).end(), r.centers.row(0).begin());
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = detail::squared_distance(x.row(i), r.centers.row(0));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : d2[i];
    std::size_t pick;
    if (total > 0.0) {
      std::vector<double> w(n);
      for (std::size_t i = 0; i < n; ++i) w[i] = chosen[i] ? 0.0 : d2[i];
      pick = rng.categorical(w);
    } else {
      // fewer distinct points than clusters: any unused row
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) rest.push_back(i);
      pick = rest[rng.index(rest.size())];
    }
    chosen[pick] = 1;
    std::copy(x.row(pick).begin(), x.row(pick).end(), r.centers.row(c).begin());
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], detail::squared_distance(x.row(i), r.centers.row(c)));
  }

  r.assignment.assign(n, 0);
  double previous = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (std::size_t it = 1; it <= params.max_iterations; ++it) {
    r.iterations = it;
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = detail::squared_distance(x.row(i), r.centers.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (it == 1 || best != r.assignment[i]) changed = true;
      r.assignment[i] = best;
      inertia += best_d;
    }
    r.inertia = inertia;
    if (!changed || (previous - inertia) <= params.tolerance * previous) {
      converged = true;
      break;
    }
    previous = inertia;

    Matrix sums(k, x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = sums.row(r.assignment[i]);
      const auto xi = x.row(i);
      for (std::size_t j = 0; j < xi.size(); ++j) s[j] += xi[j];
      ++counts[r.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its center
      auto dst = r.centers.row(c);
      const auto s = sums.row(c);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = s[j] / static_cast<double>(counts[c]);
    }
  }
  require(converged, ErrorCode::convergence, "kmeans: no convergence within the iteration cap");
  return r;
}

}  // namespace xgl
