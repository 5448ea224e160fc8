#pragma once

#include "scpvis/error.hpp"

#include <Eigen/Core>

#include <cmath>
#include <deque>
#include <functional>
#include <string_view>

namespace scpvis {

enum class SolveStatus { converged, max_iters, line_search_failed, stalled };

inline std::string_view to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iters: return "max_iters";
    case SolveStatus::line_search_failed: return "line_search_failed";
    case SolveStatus::stalled: return "stalled";
  }
  return "unknown";
}

struct SolveOptions {
  int memory = 8;
  double armijo_c1 = 1e-4;
  double backtrack = 0.5;
  int max_iterations = 500;
  int max_backtracks = 60;
  double gradient_tolerance = 1e-5;
  // Stop as `stalled` when |f_{k-past} - f_k| <= stall_delta * max(1, |f_k|).
  // Disabled when stall_past == 0.
  int stall_past = 0;
  double stall_delta = 1e-10;
  bool record_trace = false;
};

struct SolveResult {
  Eigen::VectorXd argmin;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  SolveStatus status = SolveStatus::max_iters;
  std::vector<double> trace;  // objective at every accepted iterate
};

/// Objective writes the gradient into `grad` (pre-sized) and returns the value.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

/**
 * Limited-memory BFGS with backtracking Armijo line search.
 *
 * Curvature pairs with s'y <= 0 are skipped. When the quasi-Newton direction
 * fails the line search the memory is dropped and steepest descent is tried
 * once before giving up with `line_search_failed`; the best iterate is
 * returned in every case.
 */
inline SolveResult minimize(const Objective& objective, Eigen::VectorXd x0,
                            const SolveOptions& opts = {}) {
  const Eigen::Index n = x0.size();
  if (!x0.allFinite()) throw Error(ErrorKind::input, "non-finite initial point");
  Eigen::VectorXd g(n);
  double f = objective(x0, g);
  if (!std::isfinite(f) || !g.allFinite())
    throw Error(ErrorKind::input, "non-finite objective or gradient at initial point");

  SolveResult res;
  res.argmin = std::move(x0);
  res.value = f;
  if (opts.record_trace) res.trace.push_back(f);

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  std::deque<double> past_values{f};

  Eigen::VectorXd x = res.argmin;
  Eigen::VectorXd d(n), x_new(n), g_new(n);
  std::vector<double> alpha_buf(static_cast<std::size_t>(opts.memory));

  for (int iter = 0;; ++iter) {
    const double gnorm = g.norm();
    res.gradient_norm = gnorm;
    res.iterations = iter;
    if (gnorm <= opts.gradient_tolerance) {
      res.status = SolveStatus::converged;
      break;
    }
    if (iter >= opts.max_iterations) {
      res.status = SolveStatus::max_iters;
      break;
    }

    // two-loop recursion
    d = -g;
    const int m = static_cast<int>(s_hist.size());
    for (int i = m - 1; i >= 0; --i) {
      alpha_buf[i] = rho_hist[i] * s_hist[i].dot(d);
      d -= alpha_buf[i] * y_hist[i];
    }
    if (m > 0) d *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (int i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(d);
      d += (alpha_buf[i] - beta) * s_hist[i];
    }

    bool accepted = false;
    double f_new = f;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      double slope = g.dot(d);
      if (attempt == 1 || !(slope < 0.0)) {
        if (attempt == 1 && s_hist.empty()) break;
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        d = -g;
        slope = -gnorm * gnorm;
      }
      double step = s_hist.empty() ? std::min(1.0, 1.0 / gnorm) : 1.0;
      for (int bt = 0; bt < opts.max_backtracks; ++bt) {
        x_new = x + step * d;
        f_new = objective(x_new, g_new);
        if (std::isfinite(f_new) && g_new.allFinite() &&
            f_new <= f + opts.armijo_c1 * step * slope && f_new < f) {
          accepted = true;
          break;
        }
        step *= opts.backtrack;
      }
      if (!accepted && s_hist.empty() && attempt == 0) break;
    }
    if (!accepted) {
      res.status = SolveStatus::line_search_failed;
      break;
    }

    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (static_cast<int>(s_hist.size()) == opts.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      rho_hist.push_back(1.0 / sy);
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
    }
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    res.argmin = x;
    res.value = f;
    if (opts.record_trace) res.trace.push_back(f);

    if (opts.stall_past > 0) {
      past_values.push_back(f);
      if (static_cast<int>(past_values.size()) > opts.stall_past) {
        const double old = past_values.front();
        past_values.pop_front();
        if (std::abs(old - f) <= opts.stall_delta * std::max(1.0, std::abs(f))) {
          res.gradient_norm = g.norm();
          res.iterations = iter + 1;
          res.status = res.gradient_norm <= opts.gradient_tolerance
                           ? SolveStatus::converged
                           : SolveStatus::stalled;
          return res;
        }
      }
    }
  }
  return res;
}

}  // namespace scpvis
