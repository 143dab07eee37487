#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "ncelab/densities.hpp"
#include "ncelab/errors.hpp"
#include "ncelab/integrate.hpp"

namespace ncelab {

struct DivergenceKind {
  enum class Tag { ChiSquared, Hellinger2, Harmonic, GeneralizedKL } tag;
  double pi = 0.5;  // weight for Harmonic, in (0,1)

  static DivergenceKind chi_squared() { return {Tag::ChiSquared, 0.0}; }
  static DivergenceKind hellinger2() { return {Tag::Hellinger2, 0.0}; }
  static DivergenceKind harmonic(double pi) {
    if (!(pi > 0.0 && pi < 1.0)) throw InvalidParameter("harmonic divergence requires pi in (0,1)");
    return {Tag::Harmonic, pi};
  }
  static DivergenceKind generalized_kl() { return {Tag::GeneralizedKL, 0.0}; }
};

namespace detail {

// Guard for integrands that can fail to be integrable (chi^2 with a
// lighter-tailed denominator, generalized KL with a lighter-tailed q). Two
// triggers: a node magnitude beyond 1e12, or an integrand that has stopped
// decaying at the grid boundary while still carrying non-negligible mass.
inline void tail_guard(const std::vector<double>& node_values, const char* what) {
  double mx = 0.0;
  for (double v : node_values) mx = std::max(mx, std::abs(v));
  if (mx > 1e12) throw NonFiniteIntegrand(std::string(what) + ": integrand exceeds 1e12");
  if (node_values.size() < 4 || mx == 0.0) return;
  const std::size_t n = node_values.size();
  const double floor = 1e-13 * mx;
  const double left = std::abs(node_values[0]);
  const double left_in = std::abs(node_values[1]);
  const double right = std::abs(node_values[n - 1]);
  const double right_in = std::abs(node_values[n - 2]);
  if ((left > floor && left >= 0.999 * left_in) || (right > floor && right >= 0.999 * right_in))
    throw NonFiniteIntegrand(std::string(what) + ": integrand does not decay at the grid boundary");
}

template <typename NodeFn>
double integrate_guarded_1d(const GridSpec& grid, const NodeFn& f, const char* what) {
  std::vector<double> vals(static_cast<std::size_t>(grid.n));
  for (int i = 0; i < grid.n; ++i) {
    const double v = f(point1(grid.node(i)));
    if (!std::isfinite(v)) throw NonFiniteIntegrand(std::string(what) + ": non-finite node");
    vals[static_cast<std::size_t>(i)] = v;
  }
  tail_guard(vals, what);
  std::vector<double> terms(vals.size());
  for (int i = 0; i < grid.n; ++i)
    terms[static_cast<std::size_t>(i)] = grid.weight(i) * vals[static_cast<std::size_t>(i)];
  return pairwise_sum(terms);
}

template <typename NodeFn>
double integrate_guarded_2d(const GridSpec& grid, const NodeFn& f, const char* what) {
  // guard on the max over boundary ring vs the adjacent inner ring
  double mx = 0.0, boundary = 0.0, inner = 0.0;
  std::vector<double> rows(static_cast<std::size_t>(grid.n));
  std::vector<double> terms(static_cast<std::size_t>(grid.n));
  for (int i = 0; i < grid.n; ++i) {
    for (int j = 0; j < grid.n; ++j) {
      const double v = f(point2(grid.node(i), grid.node(j)));
      if (!std::isfinite(v)) throw NonFiniteIntegrand(std::string(what) + ": non-finite node");
      const double a = std::abs(v);
      mx = std::max(mx, a);
      const bool on_boundary = i == 0 || j == 0 || i == grid.n - 1 || j == grid.n - 1;
      const bool on_inner = !on_boundary && (i == 1 || j == 1 || i == grid.n - 2 || j == grid.n - 2);
      if (on_boundary) boundary = std::max(boundary, a);
      if (on_inner) inner = std::max(inner, a);
      terms[static_cast<std::size_t>(j)] = grid.weight(j) * v;
    }
    rows[static_cast<std::size_t>(i)] = grid.weight(i) * pairwise_sum(terms);
  }
  if (mx > 1e12) throw NonFiniteIntegrand(std::string(what) + ": integrand exceeds 1e12");
  if (boundary > 1e-13 * mx && boundary >= 0.999 * inner)
    throw NonFiniteIntegrand(std::string(what) + ": integrand does not decay at the grid boundary");
  return pairwise_sum(rows);
}

template <typename NodeFn>
double integrate_guarded(const GridSpec& grid, const NodeFn& f, const char* what) {
  grid.validate();
  return grid.dims == 1 ? integrate_guarded_1d(grid, f, what) : integrate_guarded_2d(grid, f, what);
}

}  // namespace detail

/// Divergences used by the Z-estimation error formulas and the non-parametric error:
///   ChiSquared:    int p^2/q - 1
///   Hellinger2:    1 - int sqrt(p q)            (the squared Hellinger distance)
///   Harmonic(pi):  1 - int (pi/p + (1-pi)/q)^-1
///   GeneralizedKL: int (p log(p/q) - p + q)     (q may be unnormalized)
inline double divergence(const DivergenceKind& kind, const Density& p, const Density& q,
                         const GridSpec& grid) {
  if (p.dims != q.dims) throw InvalidParameter("divergence: dimension mismatch");
  switch (kind.tag) {
    case DivergenceKind::Tag::ChiSquared: {
      auto f = [&](const Point& x) {
        const double lp = p.logpdf(x), lq = q.logpdf(x);
        const double pv = std::exp(lp);
        if (pv == 0.0) return 0.0;
        return std::exp(2.0 * lp - lq);
      };
      return detail::integrate_guarded(grid, f, "chi_squared") - 1.0;
    }
    case DivergenceKind::Tag::Hellinger2: {
      auto f = [&](const Point& x) { return std::exp(0.5 * (p.logpdf(x) + q.logpdf(x))); };
      return 1.0 - integrate_grid(std::function<double(const Point&)>(f), grid);
    }
    case DivergenceKind::Tag::Harmonic: {
      const double pi = kind.pi;
      // p*q/((1-pi) p + pi q): algebraically (pi/p + (1-pi)/q)^{-1}, no reciprocals
      auto f = [&](const Point& x) {
        const double pv = std::exp(p.logpdf(x));
        const double qv = std::exp(q.logpdf(x));
        const double den = (1.0 - pi) * pv + pi * qv;
        return den > 0.0 ? pv * qv / den : 0.0;
      };
      return 1.0 - integrate_grid(std::function<double(const Point&)>(f), grid);
    }
    case DivergenceKind::Tag::GeneralizedKL: {
      auto f = [&](const Point& x) {
        const double lp = p.logpdf(x), lq = q.logpdf(x);
        const double pv = std::exp(lp), qv = std::exp(lq);
        if (pv == 0.0) return qv;  // p log p -> 0
        return pv * (lp - lq) - pv + qv;
      };
      return detail::integrate_guarded(grid, f, "generalized_kl");
    }
  }
  throw InvalidParameter("divergence: unknown kind");
}

}  // namespace ncelab
