#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "ncelab/asymptotics.hpp"
#include "ncelab/bregman.hpp"
#include "ncelab/densities.hpp"
#include "ncelab/divergence.hpp"
#include "ncelab/errors.hpp"
#include "ncelab/rng.hpp"

namespace ncelab {

/// Unnormalized target f = Z* p_d, known up to the constant being estimated.
struct UnnormalizedTarget {
  int dims = 1;
  std::function<double(const Point&)> logf;
};

inline UnnormalizedTarget scaled_target(const Density& p_d, double z_star) {
  if (!(z_star > 0.0)) throw InvalidParameter("scaled_target: Z* must be > 0");
  UnnormalizedTarget t;
  t.dims = p_d.dims;
  const double logz = std::log(z_star);
  auto logpdf = p_d.logpdf;
  t.logf = [logpdf, logz](const Point& x) { return logpdf(x) + logz; };
  return t;
}

struct ZEstimate {
  double z_hat = 0.0;
  LossKind loss_kind = LossKind::JS;
  std::int64_t n_data = 0;
  std::int64_t n_noise = 0;
  bool converged = true;  // meaningful for the implicit NCE solve
};

/// Budget split T -> (T_d, T_n) with T_n = nu T/(1+nu), rounded, T_d >= 1.
inline std::pair<std::int64_t, std::int64_t> split_budget(double T, double nu) {
  if (!(T >= 1.0) || !(nu > 0.0)) throw InvalidParameter("split_budget: need T >= 1, nu > 0");
  auto t_d = static_cast<std::int64_t>(std::llround(T / (1.0 + nu)));
  auto t_n = static_cast<std::int64_t>(std::llround(nu * T / (1.0 + nu)));
  if (t_d < 1) t_d = 1;
  if (t_n < 1) t_n = 1;
  return {t_d, t_n};
}

namespace detail {

inline double checked_mean(const std::vector<double>& v, const char* what) {
  if (v.empty()) throw InvalidParameter(std::string(what) + ": empty sample");
  double sum = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw NonFiniteRatio(std::string(what) + ": ratio overflowed");
    sum += x;
  }
  return sum / static_cast<double>(v.size());
}

}  // namespace detail

/// Table-2 family of Z estimators. IS uses the noise sample only, RevIS the
/// data sample only, IS-RevIS and NCE both. The NCE root in c = log Z is found
/// by bisection of the empirical JS gradient on c in [-30, 30].
inline ZEstimate estimate_z(LossKind loss_kind, const UnnormalizedTarget& f, const Density& p_n,
                            std::span<const Point> data_sample, std::span<const Point> noise_sample,
                            double nu = 1.0) {
  ZEstimate est;
  est.loss_kind = loss_kind;
  est.n_data = static_cast<std::int64_t>(data_sample.size());
  est.n_noise = static_cast<std::int64_t>(noise_sample.size());

  auto log_ratio_noise = [&](const Point& x) { return f.logf(x) - p_n.logpdf(x); };

  switch (loss_kind) {
    case LossKind::KL: {  // IS: E_n[f/p_n]
      if (noise_sample.empty()) throw InvalidParameter("estimate_z(IS): need a noise sample");
      std::vector<double> r;
      r.reserve(noise_sample.size());
      for (const auto& x : noise_sample) r.push_back(std::exp(log_ratio_noise(x)));
      est.z_hat = detail::checked_mean(r, "estimate_z(IS)");
      return est;
    }
    case LossKind::RevKL: {  // RevIS: (E_d[p_n/f])^{-1}
      if (data_sample.empty()) throw InvalidParameter("estimate_z(RevIS): need a data sample");
      std::vector<double> r;
      r.reserve(data_sample.size());
      for (const auto& x : data_sample) r.push_back(std::exp(-log_ratio_noise(x)));
      const double denom = detail::checked_mean(r, "estimate_z(RevIS)");
      if (!(denom > 0.0)) throw NonFiniteRatio("estimate_z(RevIS): degenerate denominator");
      est.z_hat = 1.0 / denom;
      return est;
    }
    case LossKind::H2: {  // IS-RevIS: E_n[sqrt(f/p_n)] / E_d[sqrt(p_n/f)]
      if (noise_sample.empty() || data_sample.empty())
        throw InvalidParameter("estimate_z(IS-RevIS): need both samples");
      std::vector<double> num, den;
      num.reserve(noise_sample.size());
      den.reserve(data_sample.size());
      for (const auto& x : noise_sample) num.push_back(std::exp(0.5 * log_ratio_noise(x)));
      for (const auto& x : data_sample) den.push_back(std::exp(-0.5 * log_ratio_noise(x)));
      const double d = detail::checked_mean(den, "estimate_z(IS-RevIS)");
      if (!(d > 0.0)) throw NonFiniteRatio("estimate_z(IS-RevIS): degenerate denominator");
      est.z_hat = detail::checked_mean(num, "estimate_z(IS-RevIS)") / d;
      return est;
    }
    case LossKind::JS: {  // implicit NCE root in c
      if (noise_sample.empty() || data_sample.empty())
        throw InvalidParameter("estimate_z(NCE): need both samples");
      if (!(nu > 0.0)) throw InvalidParameter("estimate_z(NCE): nu must be > 0");
      const double lognu = std::log(nu);
      auto sigmoid = [](double t) {
        return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
      };
      // g(c) = nu mean_n[sigma(F_c)] - mean_d[sigma(-F_c)], decreasing in c
      auto grad = [&](double c) {
        double gn = 0.0, gd = 0.0;
        for (const auto& x : noise_sample) gn += sigmoid(f.logf(x) - c - lognu - p_n.logpdf(x));
        for (const auto& x : data_sample) gd += sigmoid(-(f.logf(x) - c - lognu - p_n.logpdf(x)));
        return nu * gn / static_cast<double>(noise_sample.size()) -
               gd / static_cast<double>(data_sample.size());
      };
      double lo = -30.0, hi = 30.0;
      double glo = grad(lo), ghi = grad(hi);
      if (!(glo > 0.0 && ghi < 0.0)) throw NoRoot("estimate_z(NCE): no sign change in c bracket");
      while (hi - lo > 1e-12) {
        const double mid = 0.5 * (lo + hi);
        if (grad(mid) > 0.0)
          lo = mid;
        else
          hi = mid;
      }
      est.z_hat = std::exp(0.5 * (lo + hi));
      est.converged = true;
      return est;
    }
  }
  throw InvalidParameter("estimate_z: unknown loss");
}

/// Closed-form asymptotic MSE of the Z estimators (in Z space, scaled by Z*^2):
///   KL     (1+nu)/(nu T) Z*^2 chi2(p_d, p_n)
///   revKL  (1+nu)/T      Z*^2 chi2(p_n, p_d)
///   JS     (1+nu)^2/(nu T) Z*^2 d/(1-d),   d = harmonic divergence, pi = nu/(1+nu)
///   H2     (1+nu)^2/(nu T) Z*^2 d/(1-d),   d = 1 - A^2 with A = int sqrt(p_d p_n)
/// The H2 entry uses the squared affinity; expanding the general V formula (or a
/// delta-method computation on the explicit IS-RevIS estimator) gives exactly
/// (1 - A^2)/A^2, which the d/(1-d) form reproduces with d = 1 - A^2.
inline double z_mse_theory(LossKind loss_kind, const Density& p_d, const Density& p_n, double nu,
                           double T, double z_star, const GridSpec& grid) {
  if (!(nu > 0.0) || !(T > 0.0) || !(z_star > 0.0))
    throw InvalidParameter("z_mse_theory: need nu, T, Z* > 0");
  const double z2 = z_star * z_star;
  switch (loss_kind) {
    case LossKind::KL:
      return (1.0 + nu) / (nu * T) * z2 *
             divergence(DivergenceKind::chi_squared(), p_d, p_n, grid);
    case LossKind::RevKL:
      return (1.0 + nu) / T * z2 * divergence(DivergenceKind::chi_squared(), p_n, p_d, grid);
    case LossKind::JS: {
      const double d =
          divergence(DivergenceKind::harmonic(nu / (1.0 + nu)), p_d, p_n, grid);
      if (!(d < 1.0)) throw NonFiniteIntegrand("z_mse_theory(JS): harmonic divergence at 1");
      return (1.0 + nu) * (1.0 + nu) / (nu * T) * z2 * d / (1.0 - d);
    }
    case LossKind::H2: {
      const double h2 = divergence(DivergenceKind::hellinger2(), p_d, p_n, grid);
      const double d = h2 * (2.0 - h2);  // 1 - A^2 for affinity A = 1 - h2
      if (!(d < 1.0)) throw NonFiniteIntegrand("z_mse_theory(H2): disjoint supports");
      return (1.0 + nu) * (1.0 + nu) / (nu * T) * z2 * d / (1.0 - d);
    }
  }
  throw InvalidParameter("z_mse_theory: unknown loss");
}

/// The same MSE through the generic section-2.4 pipeline on the partition-only
/// model (score -1 in c), converted to Z space by the delta method.
inline double z_mse_generic(LossKind loss_kind, const Density& p_d, const Density& p_n, double nu,
                            double T, double z_star, const GridSpec& grid) {
  const ScoreMoments mo = score_moments(z_only_model(p_d), p_n, nu, loss_kind, grid);
  const Mat sigma = sigma_matrix(mo, nu);
  return z_star * z_star * mse_parametric(sigma, nu, T);
}

/// Optimal noise-data ratio of Table 3; infinity is the sentinel for KL/IS.
inline double optimal_nu_for_z(LossKind loss_kind) {
  switch (loss_kind) {
    case LossKind::RevKL: return 0.0;
    case LossKind::JS: return 1.0;
    case LossKind::KL: return std::numeric_limits<double>::infinity();
    case LossKind::H2: return 1.0;
  }
  throw InvalidParameter("optimal_nu_for_z: unknown loss");
}

struct ZBenchReport {
  std::vector<double> z_hats;
  double mse_empirical = 0.0;
  double mse_theory = 0.0;
  double stderr_boot = 0.0;  // bootstrap standard error of mse_empirical
  std::int64_t t_data = 0;
  std::int64_t t_noise = 0;
};

/// Replicated empirical MSE of a Z estimator against the closed form.
/// Per-replicate seeds are seed ^ replicate-index so the replicate loop can be
/// parallelized without changing results.
inline ZBenchReport z_benchmark(LossKind loss_kind, const Density& p_d, double z_star,
                                const Density& p_n, double nu, double T, int replicates,
                                std::uint64_t seed, const GridSpec& grid) {
  if (replicates < 2) throw InvalidParameter("z_benchmark: need at least 2 replicates");
  ZBenchReport rep;
  const auto [t_d, t_n] = split_budget(T, nu);
  rep.t_data = t_d;
  rep.t_noise = t_n;
  rep.z_hats.assign(static_cast<std::size_t>(replicates), 0.0);
  const UnnormalizedTarget f = scaled_target(p_d, z_star);

  parallel_for(replicates, [&](std::int64_t i) {
    Rng rng(seed ^ static_cast<std::uint64_t>(i));
    std::vector<Point> data, noise;
    data.reserve(static_cast<std::size_t>(t_d));
    noise.reserve(static_cast<std::size_t>(t_n));
    for (std::int64_t k = 0; k < t_d; ++k) data.push_back(p_d.draw(rng));
    for (std::int64_t k = 0; k < t_n; ++k) noise.push_back(p_n.draw(rng));
    rep.z_hats[static_cast<std::size_t>(i)] =
        estimate_z(loss_kind, f, p_n, data, noise, nu).z_hat;
  });

  std::vector<double> sq(rep.z_hats.size());
  for (std::size_t i = 0; i < sq.size(); ++i) {
    const double d = rep.z_hats[i] - z_star;
    sq[i] = d * d;
  }
  rep.mse_empirical = pairwise_sum(sq) / static_cast<double>(sq.size());
  rep.mse_theory = z_mse_theory(loss_kind, p_d, p_n, nu, T, z_star, grid);

  // bootstrap standard error of the mean squared error (200 resamples)
  Rng boot(derive_seed(seed, 0x626F6F74ULL));
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
  rep.stderr_boot = std::sqrt(var / (resamples - 1));
  return rep;
}

}  // namespace ncelab
