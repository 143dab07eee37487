#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ncelab/asymptotics.hpp"
#include "ncelab/bregman.hpp"
#include "ncelab/densities.hpp"
#include "ncelab/errors.hpp"
#include "ncelab/optim.hpp"
#include "ncelab/partition.hpp"

namespace ncelab {

struct FitResult {
  Vec beta_hat;
  double loss_value = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Model interface for the empirical fit: log-density and score at any beta.
struct FitProblem {
  int dim = 1;
  std::function<double(const Vec&, const Point&)> logpdf;
  std::function<Vec(const Vec&, const Point&)> score;
  std::function<bool(const Vec&)> in_domain;
};

inline FitProblem fit_problem(const ParametricModel& model) {
  FitProblem p;
  p.dim = model.param_dim();
  p.logpdf = [model](const Vec& beta, const Point& x) { return model_logpdf(model, beta, x); };
  p.score = [model](const Vec& beta, const Point& x) { return model_score(model, beta, x); };
  const Family fam = model.family;
  p.in_domain = [fam](const Vec& beta) {
    const double theta = beta(0);
    if (!beta.allFinite()) return false;
    if (fam == Family::GaussVar1D) return theta > 1e-8;
    if (fam == Family::GaussCorr2D) return theta > -1.0 + 1e-8 && theta < 1.0 - 1e-8;
    return true;
  };
  return p;
}

/// Partition-only fit problem in c = log Z for a fixed shape f.
inline FitProblem z_only_fit_problem(const UnnormalizedTarget& f) {
  FitProblem p;
  p.dim = 1;
  auto logf = f.logf;
  p.logpdf = [logf](const Vec& beta, const Point& x) { return logf(x) - beta(0); };
  p.score = [](const Vec&, const Point&) {
    Vec s(1);
    s(0) = -1.0;
    return s;
  };
  p.in_domain = [](const Vec& beta) { return beta.allFinite(); };
  return p;
}

namespace detail {

inline double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

// per-point gradient coefficients: w(r) r at noise points, w(r) at data points
inline double noise_coeff(LossKind loss, double logr) {
  switch (loss) {
    case LossKind::KL: return std::exp(logr);
    case LossKind::RevKL: return 1.0;
    case LossKind::JS: return sigmoid(logr);
    case LossKind::H2: return 0.5 * std::exp(0.5 * logr);
  }
  return 0.0;
}

inline double data_coeff(LossKind loss, double logr) {
  switch (loss) {
    case LossKind::KL: return 1.0;
    case LossKind::RevKL: return std::exp(-logr);
    case LossKind::JS: return sigmoid(-logr);
    case LossKind::H2: return 0.5 * std::exp(-0.5 * logr);
  }
  return 0.0;
}

}  // namespace detail

struct FitConfig {
  double grad_tol = 1e-8;
  int max_iters = 500;
};

/// Minimize the empirical Bregman classification loss
///   nu mean_n[S0(p_beta/(nu p_n))] - mean_d[S1(p_beta/(nu p_n))]
/// by BFGS with the analytic gradient assembled from the model score and the
/// loss reweighting. Noise log-densities at the sample points are fixed, so
/// they are evaluated once up front.
inline FitResult fit_nce(const FitProblem& problem, const Density& p_n,
                         std::span<const Point> data_sample, std::span<const Point> noise_sample,
                         double nu, LossKind loss, const Vec& init, const FitConfig& cfg = {}) {
  if (data_sample.empty() || noise_sample.empty())
    throw InvalidParameter("fit_nce: need nonempty data and noise samples");
  if (!(nu > 0.0)) throw InvalidParameter("fit_nce: nu must be > 0");
  const double lognu = std::log(nu);

  std::vector<double> lpn_data(data_sample.size()), lpn_noise(noise_sample.size());
  for (std::size_t i = 0; i < data_sample.size(); ++i) lpn_data[i] = p_n.logpdf(data_sample[i]);
  for (std::size_t i = 0; i < noise_sample.size(); ++i) lpn_noise[i] = p_n.logpdf(noise_sample[i]);

  auto loss_fn = [&](const Vec& beta) -> double {
    double acc_n = 0.0;
    for (std::size_t i = 0; i < noise_sample.size(); ++i) {
      const double logr = problem.logpdf(beta, noise_sample[i]) - lognu - lpn_noise[i];
      acc_n += detail::s0_from_logratio(loss, logr);
    }
    double acc_d = 0.0;
    for (std::size_t i = 0; i < data_sample.size(); ++i) {
      const double logr = problem.logpdf(beta, data_sample[i]) - lognu - lpn_data[i];
      acc_d += detail::s1_from_logratio(loss, logr);
    }
    return nu * acc_n / static_cast<double>(noise_sample.size()) -
           acc_d / static_cast<double>(data_sample.size());
  };

  auto grad_fn = [&](const Vec& beta) -> Vec {
    Vec g = Vec::Zero(problem.dim);
    for (std::size_t i = 0; i < noise_sample.size(); ++i) {
      const double logr = problem.logpdf(beta, noise_sample[i]) - lognu - lpn_noise[i];
      g += detail::noise_coeff(loss, logr) * problem.score(beta, noise_sample[i]);
    }
    g *= nu / static_cast<double>(noise_sample.size());
    Vec gd = Vec::Zero(problem.dim);
    for (std::size_t i = 0; i < data_sample.size(); ++i) {
      const double logr = problem.logpdf(beta, data_sample[i]) - lognu - lpn_data[i];
      gd += detail::data_coeff(loss, logr) * problem.score(beta, data_sample[i]);
    }
    return g - gd / static_cast<double>(data_sample.size());
  };

  BfgsConfig bcfg;
  bcfg.grad_tol = cfg.grad_tol;
  bcfg.max_iters = cfg.max_iters;
  const BfgsResult r = bfgs_minimize(loss_fn, grad_fn, problem.in_domain, init, bcfg);

  FitResult out;
  out.beta_hat = r.x;
  out.loss_value = r.value;
  out.converged = r.converged;
  out.iterations = r.iterations;
  return out;
}

inline FitResult fit_nce(const ParametricModel& model, const Density& p_n,
                         std::span<const Point> data_sample, std::span<const Point> noise_sample,
                         double nu, LossKind loss, const Vec& init, const FitConfig& cfg = {}) {
  return fit_nce(fit_problem(model), p_n, data_sample, noise_sample, nu, loss, init, cfg);
}

struct EmpiricalMseReport {
  double mse_hat = 0.0;
  double std_err = 0.0;  // bootstrap over replicates, 200 resamples
  int n_replicates = 0;
  int dropped = 0;
  double mse_asymptotic = 0.0;
  std::vector<Vec> beta_hats;  // per converged replicate
};

/// Monte-Carlo estimate of E||beta_hat - beta*||^2 across fresh-sample
/// replicates, paired with the asymptotic prediction. Replicates are
/// initialized at beta* (the local error the asymptotic theory describes) and
/// use splitmix-derived seeds so the loop parallelizes without reordering.
inline EmpiricalMseReport empirical_mse(const ParametricModel& model, const Vec& beta_star,
                                        const Density& p_n, double nu, double T, LossKind loss,
                                        int n_replicates, std::uint64_t seed,
                                        const GridSpec& grid) {
  if (n_replicates < 100) throw InvalidParameter("empirical_mse: need at least 100 replicates");
  const auto [t_d, t_n] = split_budget(T, nu);

  ParametricModel at = model;
  at.theta = beta_star(0);
  if (!model.normalized) at.c = beta_star(1);
  const Density pd = data_density(at);
  const FitProblem problem = fit_problem(at);

  std::vector<Vec> hats(static_cast<std::size_t>(n_replicates));
  std::vector<char> ok(static_cast<std::size_t>(n_replicates), 0);

  parallel_for(n_replicates, [&](std::int64_t i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::vector<Point> data, noise;
    data.reserve(static_cast<std::size_t>(t_d));
    noise.reserve(static_cast<std::size_t>(t_n));
    for (std::int64_t k = 0; k < t_d; ++k) data.push_back(pd.draw(rng));
    for (std::int64_t k = 0; k < t_n; ++k) noise.push_back(p_n.draw(rng));
    try {
      const FitResult fit = fit_nce(problem, p_n, data, noise, nu, loss, beta_star);
      if (fit.converged) {
        hats[static_cast<std::size_t>(i)] = fit.beta_hat;
        ok[static_cast<std::size_t>(i)] = 1;
      }
    } catch (const Error&) {
      // dropped below
    }
  });

  EmpiricalMseReport rep;
  rep.n_replicates = n_replicates;
  std::vector<double> sq;
  sq.reserve(static_cast<std::size_t>(n_replicates));
  for (int i = 0; i < n_replicates; ++i) {
    if (!ok[static_cast<std::size_t>(i)]) {
      rep.dropped += 1;
      continue;
    }
    const Vec d = hats[static_cast<std::size_t>(i)] - beta_star;
    sq.push_back(d.squaredNorm());
    rep.beta_hats.push_back(hats[static_cast<std::size_t>(i)]);
  }
  if (rep.dropped * 20 > n_replicates)
    throw NonConvergence("empirical_mse: more than 5% of replicates failed to converge");
  rep.mse_hat = pairwise_sum(sq) / static_cast<double>(sq.size());

  Rng boot(derive_seed(seed, 0x656D7063ULL));
  const int resamples = 200;
  std::vector<double> means(resamples);
  for (int b = 0; b < resamples; ++b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < sq.size(); ++k)
      acc += sq[static_cast<std::size_t>(boot.next_u64() % sq.size())];
    means[static_cast<std::size_t>(b)] = acc / static_cast<double>(sq.size());
  }
  double mb = 0.0;
  for (double m : means) mb += m;
  mb /= resamples;
  double var = 0.0;
  for (double m : means) var += (m - mb) * (m - mb);
  rep.std_err = std::sqrt(var / (resamples - 1));

  const ScoreMoments mo = score_moments(score_model(at), p_n, nu, loss, grid);
  rep.mse_asymptotic = mse_parametric(sigma_matrix(mo, nu), nu, T);
  return rep;
}

}  // namespace ncelab
