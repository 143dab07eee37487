#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>

#include "ncelab/bregman.hpp"
#include "ncelab/densities.hpp"
#include "ncelab/errors.hpp"
#include "ncelab/integrate.hpp"
#include "ncelab/types.hpp"

namespace ncelab {

/// A data law together with its generalized Fisher score at the true parameter;
/// everything the asymptotic formulas need to know about a model.
struct ScoreModel {
  int score_dim = 1;
  Density p_d;
  std::function<Vec(const Point&)> psi;
};

inline ScoreModel score_model(const ParametricModel& model) {
  ScoreModel s;
  s.score_dim = model.param_dim();
  s.p_d = data_density(model);
  s.psi = [model](const Point& x) { return model_score(model, x); };
  return s;
}

inline ScoreModel score_model_at(const ParametricModel& model, const Vec& beta_star) {
  ParametricModel at = model;
  at.theta = beta_star(0);
  if (!model.normalized) at.c = beta_star(1);
  return score_model(at);
}

/// Partition-only parameterization: estimating c = log Z of f = Z* p_d gives
/// the constant score psi = -1 on the fixed data law.
inline ScoreModel z_only_model(Density p_d) {
  ScoreModel s;
  s.score_dim = 1;
  s.p_d = std::move(p_d);
  s.psi = [](const Point&) {
    Vec v(1);
    v(0) = -1.0;
    return v;
  };
  return s;
}

struct ScoreMoments {
  Vec m_w;  // E_d[w psi]
  Mat I_w;  // E_d[w psi psi^T]
  Mat I_v;  // E_d[v psi psi^T]
};

namespace detail {

struct GuardStats {
  double global_max = 0.0;
  double left = 0.0, left_in = 0.0, right = 0.0, right_in = 0.0;  // 1-D sides / 2-D rings

  void check(const char* what) const {
    if (global_max > 1e12)
      throw NonFiniteIntegrand(std::string(what) + ": integrand exceeds 1e12");
    const double floor = 1e-13 * global_max;
    if ((left > floor && left >= 0.999 * left_in) ||
        (right > floor && right >= 0.999 * right_in))
      throw NonFiniteIntegrand(std::string(what) +
                               ": integrand does not decay at the grid boundary");
  }
};

}  // namespace detail

/// Reweighted score moments m_w, I_w, I_v at the true parameter, by quadrature
/// over p_d. Ratios are handled in log space; a zero-density node on exactly
/// one side is a continuous w in {0,1} for JS and NonFiniteIntegrand otherwise.
inline ScoreMoments score_moments(const ScoreModel& model, const Density& p_n, double nu,
                                  LossKind loss, const GridSpec& grid) {
  if (!(nu > 0.0)) throw InvalidParameter("score_moments: nu must be > 0");
  if (model.p_d.dims != p_n.dims) throw InvalidParameter("score_moments: dimension mismatch");
  grid.validate();
  const double lognu = std::log(nu);
  const int d = model.score_dim;

  ScoreMoments out;
  out.m_w = Vec::Zero(d);
  out.I_w = Mat::Zero(d, d);
  out.I_v = Mat::Zero(d, d);
  detail::GuardStats guard;
  const bool guarded = loss == LossKind::KL || loss == LossKind::RevKL;

  // boundary_side: 0 interior, -1/-2 left inner/boundary, +1/+2 right inner/boundary
  auto visit = [&](const Point& x, double wq, int boundary_side) {
    const double lpd = model.p_d.logpdf(x);
    const double lpn = p_n.logpdf(x);
    const double pd = std::exp(lpd);
    const double pn = std::exp(lpn);
    if (pd == 0.0 && pn == 0.0) return;
    if ((pd == 0.0) != (pn == 0.0)) {
      if (loss != LossKind::JS)
        throw NonFiniteIntegrand("score_moments: density ratio is 0 or inf at a grid node (" +
                                 std::string(loss_name(loss)) + " loss)");
    }
    const double logr = lpd - lognu - lpn;
    double wpd = 0.0, vpd = 0.0;
    switch (loss) {
      case LossKind::KL:
        wpd = pd;
        vpd = pd + std::exp(2.0 * lpd - lognu - lpn);
        break;
      case LossKind::RevKL:
        wpd = nu * pn;
        vpd = nu * pn + std::exp(2.0 * (lognu + lpn) - lpd);
        break;
      case LossKind::JS:
        // pd * sigma(-logr), continuous at ratio 0 and inf
        wpd = logr > 0.0 ? pd * std::exp(-logr) / (1.0 + std::exp(-logr))
                         : pd / (1.0 + std::exp(logr));
        vpd = wpd;
        break;
      case LossKind::H2:
        wpd = 0.5 * std::exp(0.5 * (lognu + lpn + lpd));
        vpd = 0.25 * (pd + nu * pn);
        break;
    }
    if (!std::isfinite(wpd) || !std::isfinite(vpd))
      throw NonFiniteIntegrand("score_moments: non-finite reweighted node");
    const Vec psi = model.psi(x);
    const Mat outer = psi * psi.transpose();
    out.m_w += (wq * wpd) * psi;
    out.I_w += (wq * wpd) * outer;
    out.I_v += (wq * vpd) * outer;
    if (guarded) {
      const double g = vpd * std::max(1.0, psi.squaredNorm());
      guard.global_max = std::max(guard.global_max, g);
      if (boundary_side == -2) guard.left = std::max(guard.left, g);
      if (boundary_side == -1) guard.left_in = std::max(guard.left_in, g);
      if (boundary_side == 2) guard.right = std::max(guard.right, g);
      if (boundary_side == 1) guard.right_in = std::max(guard.right_in, g);
    }
  };

  if (grid.dims == 1) {
    for (int i = 0; i < grid.n; ++i) {
      int side = 0;
      if (i == 0) side = -2;
      else if (i == 1) side = -1;
      else if (i == grid.n - 1) side = 2;
      else if (i == grid.n - 2) side = 1;
      visit(point1(grid.node(i)), grid.weight(i), side);
    }
  } else {
    for (int i = 0; i < grid.n; ++i)
      for (int j = 0; j < grid.n; ++j) {
        const bool boundary = i == 0 || j == 0 || i == grid.n - 1 || j == grid.n - 1;
        const bool inner = !boundary &&
                           (i == 1 || j == 1 || i == grid.n - 2 || j == grid.n - 2);
        // map the ring onto the left-side slots; the right slots stay empty
        const int side = boundary ? -2 : (inner ? -1 : 0);
        visit(point2(grid.node(i), grid.node(j)), grid.weight(i) * grid.weight(j), side);
      }
  }
  if (guarded) guard.check("score_moments");
  if (!out.m_w.allFinite() || !out.I_w.allFinite() || !out.I_v.allFinite())
    throw NonFiniteIntegrand("score_moments: non-finite quadrature");
  // v = w holds exactly for JS; make the matrices identical bits
  if (loss == LossKind::JS) out.I_v = out.I_w;
  return out;
}

inline ScoreMoments score_moments(const ParametricModel& model, const Vec& beta_star,
                                  const Density& p_n, double nu, LossKind loss,
                                  const GridSpec& grid) {
  return score_moments(score_model_at(model, beta_star), p_n, nu, loss, grid);
}

namespace detail {

inline Mat inverse_spd(const Mat& a, const char* what, double cond_limit = 1e12) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()));
  const auto& ev = es.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (!(lo > 0.0) || hi / lo > cond_limit)
    throw DegenerateInformation(std::string(what) + ": matrix is singular or ill-conditioned");
  return es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Asymptotic covariance Sigma = I_w^{-1} (I_v - (1 + 1/nu) m_w m_w^T) I_w^{-1}.
inline Mat sigma_matrix(const ScoreMoments& moments, double nu) {
  if (!(nu > 0.0)) throw InvalidParameter("sigma_matrix: nu must be > 0");
  const Mat iw_inv = detail::inverse_spd(moments.I_w, "sigma_matrix");
  const Mat middle =
      moments.I_v - (1.0 + 1.0 / nu) * (moments.m_w * moments.m_w.transpose());
  Mat sigma = iw_inv * middle * iw_inv;
  sigma = 0.5 * (sigma + sigma.transpose());
  return sigma;
}

/// Parametric MSE at total budget T: (nu + 1)/T * tr(Sigma).
inline double mse_parametric(const Mat& sigma, double nu, double T) {
  if (!(T > 0.0)) throw InvalidParameter("mse_parametric: T must be > 0");
  return (nu + 1.0) / T * sigma.trace();
}

/// Expected generalized KL to the fitted model: (nu + 1)/(2T) * tr(Sigma I).
inline double mse_nonparametric(const Mat& sigma, const Mat& fisher_i, double nu, double T) {
  if (!(T > 0.0)) throw InvalidParameter("mse_nonparametric: T must be > 0");
  if (sigma.rows() != fisher_i.rows())
    throw InvalidParameter("mse_nonparametric: dimension mismatch");
  return (nu + 1.0) / (2.0 * T) * (sigma * fisher_i).trace();
}

/// Cramer-Rao baseline tr(J^{-1})/T_d; defined for normalized models only.
inline double cramer_rao(const ParametricModel& model, const GridSpec& grid, double T_d) {
  if (!model.normalized)
    throw UnsupportedModel("cramer_rao: no Cramer-Rao bound for the free log-normalizer");
  if (!(T_d > 0.0)) throw InvalidParameter("cramer_rao: T_d must be > 0");
  const FisherMatrices fm = fisher_matrices(model, grid);
  const Mat jinv = detail::inverse_spd(fm.J, "cramer_rao");
  return jinv.trace() / T_d;
}

struct MseReport {
  Mat sigma;
  double mse_param = 0.0;
  double mse_nonparam = 0.0;
  std::optional<double> cramer_rao;
  // configuration echo
  std::string model_id;
  std::string noise_id;
  LossKind loss = LossKind::JS;
  double nu = 1.0;
  double T = 1.0;
};

/// One-stop evaluation of Sigma and both errors for a configuration. Sigma is
/// always evaluated at the model's own (true) parameter.
inline MseReport compute_mse_report(const ParametricModel& model, const Density& p_n, double nu,
                                    LossKind loss, double T, const GridSpec& grid) {
  MseReport r;
  const ScoreModel sm = score_model(model);
  const ScoreMoments mo = score_moments(sm, p_n, nu, loss, grid);
  r.sigma = sigma_matrix(mo, nu);
  r.mse_param = mse_parametric(r.sigma, nu, T);
  const FisherMatrices fm = fisher_matrices(model, grid);
  r.mse_nonparam = mse_nonparametric(r.sigma, fm.I, nu, T);
  if (model.normalized) r.cramer_rao = cramer_rao(model, grid, T / (1.0 + nu));
  r.model_id = std::string(family_name(model.family)) + "(theta=" + std::to_string(model.theta) +
               (model.normalized ? ",normalized" : ",unnormalized") + ")";
  r.noise_id = p_n.id;
  r.loss = loss;
  r.nu = nu;
  r.T = T;
  return r;
}

}  // namespace ncelab
