#pragma once

// RBF-kernel C-SVC trained with SMO (second-order working-set selection).
// Each example gets its own box constraint C * weight.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "xgl/core/error.hpp"
#include "xgl/core/matrix.hpp"

namespace xgl {

struct SvmParams {
  double gamma = 1.0;
  double C = 1.0;
  double tolerance = 1e-3;
  std::size_t max_iterations = 0;  // 0 = max(10'000'000, 100 n)
};

inline double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double t = a[k] - b[k];
    d += t * t;
  }
  return std::exp(-gamma * d);
}

class RbfSvm {
 public:
  /// Dual solution on the training rows, kept for diagnostics (KKT checks).
  struct Dual {
    std::vector<double> alpha;
    std::vector<double> upper;
    std::vector<double> y;  // +1 / -1
  };

  static RbfSvm fit(const Matrix& x, std::span<const Label> labels, std::span<const double> weights,
                    const SvmParams& params) {
    const std::size_t n = x.rows();
    require(labels.size() == n && weights.size() == n, ErrorCode::dimension_mismatch,
            "RbfSvm: features, labels and weights differ in length");
    require(params.gamma > 0.0 && params.C > 0.0, ErrorCode::invalid_argument,
            "RbfSvm: gamma and C must be positive");

    RbfSvm model;
    model.gamma_ = params.gamma;
    Dual& dual = model.dual_;
    dual.alpha.assign(n, 0.0);
    dual.upper.resize(n);
    dual.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      require(weights[i] > 0.0, ErrorCode::invalid_argument, "RbfSvm: weights must be positive");
      dual.upper[i] = params.C * weights[i];
      dual.y[i] = labels[i] == 1 ? 1.0 : -1.0;
    }

    // Q_ij = y_i y_j K(x_i, x_j); K_ii = 1 for the RBF kernel.
    std::vector<double> q(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      q[i * n + i] = 1.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double v = dual.y[i] * dual.y[j] * rbf_kernel(x.row(i), x.row(j), params.gamma);
        q[i * n + j] = v;
        q[j * n + i] = v;
      }
    }

    auto& a = dual.alpha;
    const auto& c = dual.upper;
    const auto& y = dual.y;
    std::vector<double> grad(n, -1.0);
    auto at_upper = [&](std::size_t t) { return a[t] >= c[t]; };
    auto at_lower = [&](std::size_t t) { return a[t] <= 0.0; };
    constexpr double tau = 1e-12;

    const std::size_t cap = params.max_iterations > 0 ? params.max_iterations
                                                      : std::max<std::size_t>(10'000'000, 100 * n);
    model.converged_ = false;
    std::size_t iter = 0;
    for (; iter < cap; ++iter) {
      double gmax = -std::numeric_limits<double>::infinity();
      std::ptrdiff_t i = -1;
      for (std::size_t t = 0; t < n; ++t) {
        if (y[t] > 0) {
          if (!at_upper(t) && -grad[t] >= gmax) { gmax = -grad[t]; i = static_cast<std::ptrdiff_t>(t); }
        } else {
          if (!at_lower(t) && grad[t] >= gmax) { gmax = grad[t]; i = static_cast<std::ptrdiff_t>(t); }
        }
      }
      double gmax2 = -std::numeric_limits<double>::infinity();
      std::ptrdiff_t j = -1;
      double obj_min = std::numeric_limits<double>::infinity();
      if (i >= 0) {
        const double* qi = &q[static_cast<std::size_t>(i) * n];
        const double yi = y[i];
        for (std::size_t t = 0; t < n; ++t) {
          if (y[t] > 0) {
            if (at_lower(t)) continue;
            const double diff = gmax + grad[t];
            if (grad[t] >= gmax2) gmax2 = grad[t];
            if (diff > 0) {
              double quad = 2.0 - 2.0 * yi * qi[t];
              if (quad <= 0) quad = tau;
              const double obj = -(diff * diff) / quad;
              if (obj <= obj_min) { j = static_cast<std::ptrdiff_t>(t); obj_min = obj; }
            }
          } else {
            if (at_upper(t)) continue;
            const double diff = gmax - grad[t];
            if (-grad[t] >= gmax2) gmax2 = -grad[t];
            if (diff > 0) {
              double quad = 2.0 + 2.0 * yi * qi[t];
              if (quad <= 0) quad = tau;
              const double obj = -(diff * diff) / quad;
              if (obj <= obj_min) { j = static_cast<std::ptrdiff_t>(t); obj_min = obj; }
            }
          }
        }
      }
      if (i < 0 || j < 0 || gmax + gmax2 < params.tolerance) {
        model.converged_ = true;
        break;
      }

      const auto ui = static_cast<std::size_t>(i);
      const auto uj = static_cast<std::size_t>(j);
      const double* qi = &q[ui * n];
      const double* qj = &q[uj * n];
      const double old_ai = a[ui], old_aj = a[uj];
      const double ci = c[ui], cj = c[uj];
      if (y[ui] != y[uj]) {
        double quad = 2.0 + 2.0 * qi[uj];
        if (quad <= 0) quad = tau;
        const double delta = (-grad[ui] - grad[uj]) / quad;
        const double diff = a[ui] - a[uj];
        a[ui] += delta;
        a[uj] += delta;
        if (diff > 0) {
          if (a[uj] < 0) { a[uj] = 0; a[ui] = diff; }
        } else {
          if (a[ui] < 0) { a[ui] = 0; a[uj] = -diff; }
        }
        if (diff > ci - cj) {
          if (a[ui] > ci) { a[ui] = ci; a[uj] = ci - diff; }
        } else {
          if (a[uj] > cj) { a[uj] = cj; a[ui] = cj + diff; }
        }
      } else {
        double quad = 2.0 - 2.0 * qi[uj];
        if (quad <= 0) quad = tau;
        const double delta = (grad[ui] - grad[uj]) / quad;
        const double sum = a[ui] + a[uj];
        a[ui] -= delta;
        a[uj] += delta;
        if (sum > ci) {
          if (a[ui] > ci) { a[ui] = ci; a[uj] = sum - ci; }
        } else {
          if (a[uj] < 0) { a[uj] = 0; a[ui] = sum; }
        }
        if (sum > cj) {
          if (a[uj] > cj) { a[uj] = cj; a[ui] = sum - cj; }
        } else {
          if (a[ui] < 0) { a[ui] = 0; a[uj] = sum; }
        }
      }
      const double dai = a[ui] - old_ai, daj = a[uj] - old_aj;
      for (std::size_t t = 0; t < n; ++t) grad[t] += qi[t] * dai + qj[t] * daj;
    }
    model.iterations_ = iter;

    // Bias from free vectors, or the midpoint of the feasible interval.
    double ub = std::numeric_limits<double>::infinity(), lb = -ub, free_sum = 0.0;
    std::size_t n_free = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double yg = y[t] * grad[t];
      if (at_upper(t)) {
        if (y[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
      } else if (at_lower(t)) {
        if (y[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
      } else {
        ++n_free;
        free_sum += yg;
      }
    }
    model.rho_ = n_free > 0 ? free_sum / static_cast<double>(n_free) : (ub + lb) / 2.0;

    for (std::size_t t = 0; t < n; ++t) {
      if (a[t] > 0.0) {
        model.support_.append_row(x.row(t));
        model.coef_.push_back(a[t] * y[t]);
      }
    }
    if (model.support_.cols() == 0) model.support_ = Matrix(0, x.cols());
    return model;
  }

  /// Signed distance-like score; positive means class 1.
  double decision(std::span<const double> row) const {
    require(row.size() == support_.cols(), ErrorCode::dimension_mismatch, "RbfSvm: feature count mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < coef_.size(); ++k) s += coef_[k] * rbf_kernel(support_.row(k), row, gamma_);
    return s - rho_;
  }

  bool converged() const { return converged_; }
  std::size_t iterations() const { return iterations_; }
  double gamma() const { return gamma_; }
  double rho() const { return rho_; }
  const Matrix& support_vectors() const { return support_; }
  const std::vector<double>& coefficients() const { return coef_; }
  const Dual& dual() const { return dual_; }

  static RbfSvm from_parts(Matrix support, std::vector<double> coef, double rho, double gamma) {
    require(support.rows() == coef.size(), ErrorCode::parse_error, "RbfSvm: support/coef size mismatch");
    RbfSvm m;
    m.support_ = std::move(support);
    m.coef_ = std::move(coef);
    m.rho_ = rho;
    m.gamma_ = gamma;
    m.converged_ = true;
    return m;
  }

 private:
  Matrix support_;
  std::vector<double> coef_;
  double rho_ = 0.0;
  double gamma_ = 1.0;
  bool converged_ = false;
  std::size_t iterations_ = 0;
  Dual dual_;
};

}  // namespace xgl
