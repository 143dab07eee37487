#pragma once

#include <cmath>
#include <string>

#include "ncelab/densities.hpp"
#include "ncelab/errors.hpp"
#include "ncelab/integrate.hpp"
#include "ncelab/types.hpp"

namespace ncelab {

enum class LossKind { KL, RevKL, JS, H2 };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::KL: return "kl";
    case LossKind::RevKL: return "revkl";
    case LossKind::JS: return "js";
    case LossKind::H2: return "h2";
  }
  return "?";
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "kl") return LossKind::KL;
  if (s == "revkl") return LossKind::RevKL;
  if (s == "js") return LossKind::JS;
  if (s == "h2") return LossKind::H2;
  throw ConfigError("unknown loss '" + s + "' (expected kl|revkl|js|h2)");
}

struct PhiDerivatives {
  double phi;
  double dphi;
  double ddphi;
};

/// phi, phi', phi'' of the convex generator at x > 0.
inline PhiDerivatives phi_eval(LossKind kind, double x) {
  if (!(x > 0.0)) throw DomainError("phi_eval: x must be > 0");
  switch (kind) {
    case LossKind::KL:
      return {x * std::log(x), 1.0 + std::log(x), 1.0 / x};
    case LossKind::RevKL:
      return {-std::log(x), -1.0 / x, 1.0 / (x * x)};
    case LossKind::JS:
      return {x * std::log(x) - (1.0 + x) * std::log(0.5 * (1.0 + x)),
              std::log(2.0 * x / (1.0 + x)), 1.0 / (x * (1.0 + x))};
    case LossKind::H2: {
      const double s = std::sqrt(x);
      return {(1.0 - s) * (1.0 - s), 1.0 - 1.0 / s, 0.5 / (x * s)};
    }
  }
  throw DomainError("phi_eval: unknown loss");
}

/// Data reweighting w(ratio) = ratio * phi''(ratio), ratio = p_d / (nu p_n).
inline double reweight_w(LossKind kind, double ratio) {
  if (!(ratio > 0.0)) throw DomainError("reweight_w: ratio must be > 0");
  switch (kind) {
    case LossKind::KL: return 1.0;
    case LossKind::RevKL: return 1.0 / ratio;
    case LossKind::JS: return 1.0 / (1.0 + ratio);
    case LossKind::H2: return 0.5 / std::sqrt(ratio);
  }
  throw DomainError("reweight_w: unknown loss");
}

/// v(ratio) = w(ratio)^2 * (1 + ratio); the posterior identity makes v = w for JS.
inline double reweight_v(LossKind kind, double ratio) {
  if (!(ratio > 0.0)) throw DomainError("reweight_v: ratio must be > 0");
  if (kind == LossKind::JS) return reweight_w(kind, ratio);
  const double w = reweight_w(kind, ratio);
  return w * w * (1.0 + ratio);
}

namespace detail {

inline double softplus(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

/// S0(r) evaluated from logr = log(ratio); stable for extreme ratios.
inline double s0_from_logratio(LossKind kind, double logr) {
  switch (kind) {
    case LossKind::KL: return std::exp(logr);                  // r
    case LossKind::RevKL: return logr - 1.0;                   // log r - 1
    case LossKind::JS: return softplus(logr) - std::log(2.0);  // log((1+r)/2)
    case LossKind::H2: return std::exp(0.5 * logr) - 1.0;      // sqrt(r) - 1
  }
  return 0.0;
}

/// S1(r) evaluated from logr.
inline double s1_from_logratio(LossKind kind, double logr) {
  switch (kind) {
    case LossKind::KL: return 1.0 + logr;
    case LossKind::RevKL: return -std::exp(-logr);
    case LossKind::JS: return std::log(2.0) - softplus(-logr);  // log(2r/(1+r))
    case LossKind::H2: return 1.0 - std::exp(-0.5 * logr);
  }
  return 0.0;
}

}  // namespace detail

/// Population Bregman classification loss
///   L(beta) = nu E_n[S0(p_beta/(nu p_n))] - E_d[S1(p_beta/(nu p_n))]
/// by quadrature; minimized at beta* for a well-specified model.
inline double population_loss(const ParametricModel& model, const Vec& beta, const Density& p_n,
                              double nu, LossKind loss, const GridSpec& grid) {
  if (!(nu > 0.0)) throw InvalidParameter("population_loss: nu must be > 0");
  const Density pd = data_density(model);
  const double lognu = std::log(nu);
  auto integrand = [&](const Point& x) -> double {
    const double lpb = model_logpdf(model, beta, x);
    const double lpn = p_n.logpdf(x);
    const double lpd = pd.logpdf(x);
    const double pn = std::exp(lpn);
    const double pdv = std::exp(lpd);
    if (pn == 0.0 && pdv == 0.0) return 0.0;
    const double logr = lpb - lognu - lpn;  // may be +-inf at support boundaries
    double term = 0.0;
    if (pn > 0.0) term += nu * pn * detail::s0_from_logratio(loss, logr);
    if (pdv > 0.0) term -= pdv * detail::s1_from_logratio(loss, logr);
    return term;
  };
  return integrate_grid(std::function<double(const Point&)>(integrand), grid);
}

/// Gradient of the population loss:  nu E_n[w r psi] - E_d[w psi].
inline Vec population_loss_grad(const ParametricModel& model, const Vec& beta, const Density& p_n,
                                double nu, LossKind loss, const GridSpec& grid) {
  if (!(nu > 0.0)) throw InvalidParameter("population_loss_grad: nu must be > 0");
  const Density pd = data_density(model);
  const double lognu = std::log(nu);
  const int d = static_cast<int>(beta.size());
  Vec acc = Vec::Zero(d);

  auto add = [&](const Point& x, double wq) {
    const double lpb = model_logpdf(model, beta, x);
    const double lpn = p_n.logpdf(x);
    const double lpd = pd.logpdf(x);
    const double pn = std::exp(lpn);
    const double pdv = std::exp(lpd);
    if (pn == 0.0 && pdv == 0.0) return;
    const double logr = lpb - lognu - lpn;
    const Vec psi = model_score(model, beta, x);
    double coeff = 0.0;
    if (pn > 0.0) {
      // nu p_n w(r) r: stable product via per-loss closed forms
      switch (loss) {
        case LossKind::KL: coeff += nu * pn * std::exp(logr); break;
        case LossKind::RevKL: coeff += nu * pn; break;
        case LossKind::JS: coeff += nu * pn / (1.0 + std::exp(-logr)); break;
        case LossKind::H2: coeff += nu * pn * 0.5 * std::exp(0.5 * logr); break;
      }
    }
    if (pdv > 0.0) {
      switch (loss) {
        case LossKind::KL: coeff -= pdv; break;
        case LossKind::RevKL: coeff -= pdv * std::exp(-logr); break;
        case LossKind::JS: coeff -= pdv / (1.0 + std::exp(logr)); break;
        case LossKind::H2: coeff -= pdv * 0.5 * std::exp(-0.5 * logr); break;
      }
    }
    if (!std::isfinite(coeff)) throw NonFiniteIntegrand("population_loss_grad: non-finite node");
    acc += (wq * coeff) * psi;
  };

  grid.validate();
  if (grid.dims == 1) {
    for (int i = 0; i < grid.n; ++i) add(point1(grid.node(i)), grid.weight(i));
  } else {
    for (int i = 0; i < grid.n; ++i)
      for (int j = 0; j < grid.n; ++j)
        add(point2(grid.node(i), grid.node(j)), grid.weight(i) * grid.weight(j));
  }
  return acc;
}

}  // namespace ncelab
