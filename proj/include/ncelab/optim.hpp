#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "ncelab/errors.hpp"
#include "ncelab/integrate.hpp"
#include "ncelab/types.hpp"

namespace ncelab {

using DVec = Eigen::VectorXd;

struct NlcgConfig {
  int max_iters = 100;
  double fd_step = 1e-6;
  double grad_tol = 1e-9;
  double armijo_c1 = 1e-4;
  int max_backtracks = 40;
};

struct NlcgResult {
  DVec x;
  double value = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // objective after each accepted step (trace[0] = initial)
};

namespace detail {

/// Central finite-difference gradient of f at x; columns evaluated in parallel.
inline DVec fd_gradient(const std::function<double(const DVec&)>& f, const DVec& x, double h) {
  const auto n = x.size();
  DVec g(n);
  std::vector<double> plus(static_cast<std::size_t>(n)), minus(static_cast<std::size_t>(n));
  parallel_for(2 * n, [&](std::int64_t k) {
    const auto i = k / 2;
    DVec xp = x;
    if (k % 2 == 0) {
      xp(i) += h;
      plus[static_cast<std::size_t>(i)] = f(xp);
    } else {
      xp(i) -= h;
      minus[static_cast<std::size_t>(i)] = f(xp);
    }
  });
  for (Eigen::Index i = 0; i < n; ++i)
    g(i) = (plus[static_cast<std::size_t>(i)] - minus[static_cast<std::size_t>(i)]) / (2.0 * h);
  return g;
}

}  // namespace detail

/// Projected nonlinear conjugate gradient (Polak-Ribiere+ with restarts) with
/// finite-difference gradients. `project` maps any iterate back to the feasible
/// set; the objective is evaluated on projected points only.
inline NlcgResult nlcg_minimize(const std::function<double(const DVec&)>& raw_objective,
                                const std::function<DVec(const DVec&)>& project, const DVec& x0,
                                const NlcgConfig& cfg = {}) {
  auto f = [&](const DVec& x) { return raw_objective(project(x)); };

  DVec x = project(x0);
  double fx = raw_objective(x);
  if (!std::isfinite(fx)) throw NonFiniteIntegrand("nlcg: objective not finite at the start");

  NlcgResult res;
  res.trace.push_back(fx);
  DVec g = detail::fd_gradient(f, x, cfg.fd_step);
  DVec d = -g;
  double prev_decrease = 0.0;

  // Line search: quadratic-fit initial step (Fletcher's 2*df/gd guess after the
  // first iteration), then expand while decreasing, else backtrack. The weight
  // landscape is badly scaled, so the step size must be able to grow.
  auto line_search = [&](double gd, double& alpha_out, DVec& xnew, double& fnew) -> bool {
    double alpha;
    if (prev_decrease > 0.0) {
      alpha = std::min(1e8, 2.02 * prev_decrease / (-gd));
    } else {
      const double t = 1e-3 / std::max(1.0, d.lpNorm<Eigen::Infinity>());
      const double ft = raw_objective(project(x + t * d));
      const double curv = 2.0 * (ft - fx - t * gd) / (t * t);
      alpha = (std::isfinite(curv) && curv > 0.0) ? -gd / curv : 1.0;
      alpha = std::clamp(alpha, 1e-12, 1e8);
    }
    for (int bt = 0; bt < cfg.max_backtracks; ++bt) {
      xnew = project(x + alpha * d);
      fnew = raw_objective(xnew);
      if (std::isfinite(fnew) && fnew <= fx + cfg.armijo_c1 * alpha * gd) {
        // expand while it keeps paying off
        for (int ex = 0; ex < 30; ++ex) {
          const DVec xtry = project(x + 2.0 * alpha * d);
          const double ftry = raw_objective(xtry);
          if (!std::isfinite(ftry) || ftry >= fnew) break;
          alpha *= 2.0;
          xnew = xtry;
          fnew = ftry;
        }
        alpha_out = alpha;
        return true;
      }
      alpha *= 0.5;
    }
    return false;
  };

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < cfg.grad_tol) break;
    double gd = g.dot(d);
    if (gd >= 0.0) {  // not a descent direction: restart on steepest descent
      d = -g;
      gd = g.dot(d);
      if (gd >= 0.0) break;
    }

    double alpha = 0.0, fnew = 0.0;
    DVec xnew;
    bool accepted = line_search(gd, alpha, xnew, fnew);
    if (!accepted && (d + g).lpNorm<Eigen::Infinity>() != 0.0) {
      d = -g;  // one restart, then give the line search a second chance
      gd = g.dot(d);
      prev_decrease = 0.0;
      accepted = line_search(gd, alpha, xnew, fnew);
    }
    if (!accepted) break;  // numerically at a local minimizer

    const DVec gold = g;
    prev_decrease = std::max(fx - fnew, 0.0);
    x = xnew;
    fx = fnew;
    res.trace.push_back(fx);
    res.iterations = iter + 1;
    g = detail::fd_gradient(f, x, cfg.fd_step);

    // Polak-Ribiere+ with periodic restart
    double beta = 0.0;
    const double denom = gold.squaredNorm();
    if (denom > 0.0 && (iter + 1) % x.size() != 0)
      beta = std::max(0.0, g.dot(g - gold) / denom);
    d = -g + beta * d;
  }

  res.x = x;
  res.value = fx;
  return res;
}

struct BfgsConfig {
  int max_iters = 500;
  double grad_tol = 1e-8;
  double armijo_c1 = 1e-4;
  int max_backtracks = 60;
};

struct BfgsResult {
  Vec x;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// BFGS with backtracking line search on a small dense problem. `in_domain`
/// rejects iterates outside the parameter domain (the step is then shrunk).
inline BfgsResult bfgs_minimize(const std::function<double(const Vec&)>& f,
                                const std::function<Vec(const Vec&)>& grad,
                                const std::function<bool(const Vec&)>& in_domain, const Vec& x0,
                                const BfgsConfig& cfg = {}) {
  const int n = static_cast<int>(x0.size());
  BfgsResult res;
  Vec x = x0;
  if (!in_domain(x)) throw InvalidParameter("bfgs: initial point outside the domain");
  double fx = f(x);
  Vec g = grad(x);
  Mat h_inv = Mat::Identity(n, n);

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    if (g.norm() < cfg.grad_tol) {
      res.converged = true;
      break;
    }
    Vec d = -(h_inv * g);
    double gd = g.dot(d);
    if (!(gd < 0.0)) {
      h_inv = Mat::Identity(n, n);
      d = -g;
      gd = g.dot(d);
    }

    // Armijo with a small absolute slack so steps are still accepted once the
    // objective differences reach the floating-point noise floor; the analytic
    // gradient then keeps converging.
    const double f_slack = 1e-14 * (1.0 + std::abs(fx));
    double alpha = 1.0;
    bool accepted = false;
    Vec xnew;
    double fnew = 0.0;
    for (int bt = 0; bt < cfg.max_backtracks; ++bt) {
      xnew = x + alpha * d;
      if (!in_domain(xnew)) {  // domain escape: backtrack
        alpha *= 0.5;
        continue;
      }
      fnew = f(xnew);
      if (std::isfinite(fnew) && fnew <= fx + cfg.armijo_c1 * alpha * gd + f_slack) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;

    const Vec gnew = grad(xnew);
    const Vec s = xnew - x;
    const Vec y = gnew - g;
    const double sy = s.dot(y);
    if (sy > 1e-14) {
      const Mat id = Mat::Identity(n, n);
      const Mat left = id - (s * y.transpose()) / sy;
      h_inv = left * h_inv * left.transpose() + (s * s.transpose()) / sy;
    }
    x = xnew;
    fx = fnew;
    g = gnew;
    res.iterations = iter + 1;
  }
  if (g.norm() < cfg.grad_tol) res.converged = true;
  res.x = x;
  res.value = fx;
  return res;
}

}  // namespace ncelab
