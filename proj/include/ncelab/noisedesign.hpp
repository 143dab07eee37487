#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ncelab/asymptotics.hpp"
#include "ncelab/bregman.hpp"
#include "ncelab/densities.hpp"
#include "ncelab/errors.hpp"
#include "ncelab/integrate.hpp"
#include "ncelab/optim.hpp"

namespace ncelab {

enum class NoiseObjective { Parametric, Nonparametric };

enum class WeightKind { W1ParamAllNoise, W3NonparamAllNoise };

struct OptimalNoiseResult {
  Density density;
  WeightKind weight_kind = WeightKind::W1ParamAllNoise;
  double normalizer = 0.0;  // integral of p_d * weight before normalization
};

namespace detail {

/// ||I^{-e} psi(x)|| with e = 1 (parametric) or 1/2 (nonparametric).
inline std::function<double(const Point&)> limit_weight(const ScoreModel& sm, const Mat& fisher_i,
                                                        NoiseObjective objective) {
  const Mat inv = inverse_spd(fisher_i, "optimal_noise_allnoise");
  if (objective == NoiseObjective::Parametric) {
    auto psi = sm.psi;
    return [psi, inv](const Point& x) { return (inv * psi(x)).norm(); };
  }
  auto psi = sm.psi;
  return [psi, inv](const Point& x) {
    const Vec s = psi(x);
    return std::sqrt(std::max(0.0, s.dot(inv * s)));
  };
}

}  // namespace detail

/// All-noise-limit optimal noise: grid density proportional to p_d(x) ||I^{-e} psi(x)||.
inline OptimalNoiseResult optimal_noise_allnoise(const ParametricModel& model, const Vec& beta_star,
                                                 NoiseObjective objective, const GridSpec& grid) {
  ParametricModel at = model;
  at.theta = beta_star(0);
  if (!model.normalized) at.c = beta_star(1);
  const ScoreModel sm = score_model(at);
  const FisherMatrices fm = fisher_matrices(at, grid);
  const auto weight = detail::limit_weight(sm, fm.I, objective);
  const auto logpdf = sm.p_d.logpdf;

  OptimalNoiseResult out;
  out.weight_kind = objective == NoiseObjective::Parametric ? WeightKind::W1ParamAllNoise
                                                            : WeightKind::W3NonparamAllNoise;
  auto unnormalized = [&](const Point& x) { return std::exp(logpdf(x)) * weight(x); };
  if (grid.dims == 1) {
    GridDensity1D g = make_grid_density_1d(grid, [&](double x) { return unnormalized(point1(x)); });
    out.normalizer = integrate_grid(std::function<double(const Point&)>(unnormalized), grid);
    out.density = grid_density(std::move(g), std::string("optimal_noise(") +
                                                 (objective == NoiseObjective::Parametric
                                                      ? "parametric"
                                                      : "nonparametric") +
                                                 ")");
  } else {
    GridDensity2D g = make_grid_density_2d(grid, unnormalized);
    out.normalizer = integrate_grid(std::function<double(const Point&)>(unnormalized), grid);
    out.density = grid_density(std::move(g), std::string("optimal_noise2d(") +
                                                 (objective == NoiseObjective::Parametric
                                                      ? "parametric"
                                                      : "nonparametric") +
                                                 ")");
  }
  return out;
}

// ---------------------------------------------------------------------------
// All-data limit (scalar parameter): Dirac candidates and a softmax relaxation.
// ---------------------------------------------------------------------------

struct DiracCandidate {
  double location = 0.0;
  double score = 0.0;      // d/dbeta F at the candidate
  double objective = 0.0;  // p_d * w at the candidate
};

struct DiracCandidateSet {
  std::vector<DiracCandidate> points;  // sorted by descending objective
  Density relaxed_density;             // softmax relaxation on the grid
};

/// Local maxima of p_d * w on the grid, with w = psi^2 (parametric objective)
/// or |psi| (non-parametric). Defined for scalar-parameter models only.
/// The relaxed density is the temperature-tau softmax of the log objective,
/// i.e. proportional to (p_d w)^{1/tau} on the grid.
inline DiracCandidateSet alldata_candidates(const ParametricModel& model, const Vec& beta_star,
                                            NoiseObjective objective, const GridSpec& grid,
                                            double temperature) {
  if (model.param_dim() != 1)
    throw UnsupportedModel("alldata_candidates: requires a scalar parameter");
  if (model.dims() != 1 || grid.dims != 1)
    throw UnsupportedModel("alldata_candidates: 1-D sample space only");
  if (!(temperature > 0.0)) throw InvalidParameter("alldata_candidates: temperature must be > 0");

  ParametricModel at = model;
  at.theta = beta_star(0);
  const Density pd = data_density(at);

  std::vector<double> score(static_cast<std::size_t>(grid.n));
  std::vector<double> obj(static_cast<std::size_t>(grid.n));
  for (int i = 0; i < grid.n; ++i) {
    const Point x = point1(grid.node(i));
    const double s = model_score(at, x)(0);
    const double w = objective == NoiseObjective::Parametric ? s * s : std::abs(s);
    score[static_cast<std::size_t>(i)] = s;
    obj[static_cast<std::size_t>(i)] = std::exp(pd.logpdf(x)) * w;
  }

  DiracCandidateSet out;
  for (int i = 1; i + 1 < grid.n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (obj[k] > obj[k - 1] && obj[k] > obj[k + 1])
      out.points.push_back({grid.node(i), score[k], obj[k]});
  }
  std::sort(out.points.begin(), out.points.end(),
            [](const DiracCandidate& a, const DiracCandidate& b) {
              return a.objective > b.objective;
            });

  double max_log = -std::numeric_limits<double>::infinity();
  for (double o : obj)
    if (o > 0.0) max_log = std::max(max_log, std::log(o));
  if (!std::isfinite(max_log))
    throw NonFiniteIntegrand("alldata_candidates: objective vanishes on the whole grid");
  GridDensity1D relaxed = make_grid_density_1d(grid, [&](double x) {
    const double t = (x - grid.lo) / grid.step();
    const auto i = static_cast<std::size_t>(std::llround(t));
    const double o = obj[std::min(i, obj.size() - 1)];
    if (!(o > 0.0)) return 0.0;
    return std::exp((std::log(o) - max_log) / temperature);
  });
  out.relaxed_density = grid_density(std::move(relaxed), "alldata_relaxed");
  return out;
}

// ---------------------------------------------------------------------------
// Theorem-2 gaps in the all-noise limit.
// ---------------------------------------------------------------------------

struct GapReport {
  double gap_pd_vs_opt = 0.0;  // [MSE(p_d) - MSE(p_n_opt)] in the limit, = Var_d(w1)/T
  double gap_opt_vs_cr = 0.0;  // [MSE(p_n_opt) - Cramer-Rao] = (E_d w1)^2 / T
  double var_w1 = 0.0;
};

inline GapReport mse_gaps_allnoise(const ParametricModel& model, const Vec& beta_star,
                                   const GridSpec& grid, double T) {
  if (!model.normalized)
    throw UnsupportedModel("mse_gaps_allnoise: Cramer-Rao gap needs a normalized model");
  if (!(T > 0.0)) throw InvalidParameter("mse_gaps_allnoise: T must be > 0");
  ParametricModel at = model;
  at.theta = beta_star(0);
  const ScoreModel sm = score_model(at);
  const FisherMatrices fm = fisher_matrices(at, grid);
  const auto w1 = detail::limit_weight(sm, fm.I, NoiseObjective::Parametric);
  const auto logpdf = sm.p_d.logpdf;

  const double e_w = integrate_grid(
      std::function<double(const Point&)>(
          [&](const Point& x) { return std::exp(logpdf(x)) * w1(x); }),
      grid);
  const double e_w2 = integrate_grid(
      std::function<double(const Point&)>(
          [&](const Point& x) {
            const double w = w1(x);
            return std::exp(logpdf(x)) * w * w;
          }),
      grid);
  GapReport rep;
  rep.var_w1 = std::max(0.0, e_w2 - e_w * e_w);
  rep.gap_pd_vs_opt = rep.var_w1 / T;
  rep.gap_opt_vs_cr = e_w * e_w / T;
  return rep;
}

// ---------------------------------------------------------------------------
// Grid optimizers for the noise parameter and the noise proportion.
// ---------------------------------------------------------------------------

/// Noise density in the model's own parametric family.
inline Density family_noise(Family family, double param) {
  switch (family) {
    case Family::GaussMean1D: return normal1d(param, 1.0);
    case Family::GaussVar1D: return normal1d(0.0, param);
    case Family::GaussCorr2D: return gauss_corr2d(param);
  }
  throw InvalidParameter("family_noise: unknown family");
}

inline bool family_noise_param_valid(Family family, double param) {
  if (!std::isfinite(param)) return false;
  if (family == Family::GaussVar1D) return param > 0.0;
  if (family == Family::GaussCorr2D) return param > -1.0 && param < 1.0;
  return true;
}

struct NoiseScanRow {
  double noise_param = 0.0;
  double nu = 0.0;
  double mse = 0.0;
  bool feasible = true;
};

struct ParametricNoiseResult {
  double noise_param = 0.0;
  double nu = 0.0;
  double mse = 0.0;
  std::vector<NoiseScanRow> scan;
  int skipped = 0;
};

enum class NuMode { Fixed, Joint };

/// Dense-grid minimization of the asymptotic error over a parametric noise
/// family (optionally jointly over nu). Ties break toward the smallest
/// parameter value; infeasible candidates are skipped and counted.
inline ParametricNoiseResult optimize_noise_parametric(
    const ParametricModel& model, const Vec& beta_star, NuMode nu_mode, double fixed_nu,
    std::vector<double> param_grid, std::vector<double> nu_grid, LossKind loss,
    NoiseObjective objective, double T, const GridSpec& grid) {
  if (param_grid.empty()) throw InvalidParameter("optimize_noise_parametric: empty parameter grid");
  if (nu_mode == NuMode::Fixed) {
    nu_grid = {fixed_nu};
  } else if (nu_grid.empty()) {
    throw InvalidParameter("optimize_noise_parametric: empty nu grid");
  }
  std::sort(param_grid.begin(), param_grid.end());
  std::sort(nu_grid.begin(), nu_grid.end());

  ParametricModel at = model;
  at.theta = beta_star(0);
  if (!model.normalized) at.c = beta_star(1);
  const ScoreModel sm = score_model(at);
  const FisherMatrices fm = fisher_matrices(at, grid);

  ParametricNoiseResult best;
  best.mse = std::numeric_limits<double>::infinity();
  for (double nu : nu_grid) {
    for (double param : param_grid) {
      NoiseScanRow row;
      row.noise_param = param;
      row.nu = nu;
      if (!family_noise_param_valid(model.family, param)) {
        row.feasible = false;
        best.skipped += 1;
        best.scan.push_back(row);
        continue;
      }
      try {
        const Density p_n = family_noise(model.family, param);
        const ScoreMoments mo = score_moments(sm, p_n, nu, loss, grid);
        const Mat sigma = sigma_matrix(mo, nu);
        row.mse = objective == NoiseObjective::Parametric
                      ? mse_parametric(sigma, nu, T)
                      : mse_nonparametric(sigma, fm.I, nu, T);
      } catch (const Error&) {
        row.feasible = false;
        best.skipped += 1;
        best.scan.push_back(row);
        continue;
      }
      if (!std::isfinite(row.mse)) {
        row.feasible = false;
        best.skipped += 1;
        best.scan.push_back(row);
        continue;
      }
      best.scan.push_back(row);
      if (row.mse < best.mse) {  // strict: keeps the smallest parameter on ties
        best.mse = row.mse;
        best.noise_param = param;
        best.nu = nu;
      }
    }
  }
  if (!std::isfinite(best.mse))
    throw AllCandidatesInfeasible("optimize_noise_parametric: every grid candidate failed");
  return best;
}

struct NuScanResult {
  double nu_star = 0.0;
  double mse = 0.0;
  std::vector<std::pair<double, double>> scan;  // (nu, mse)
};

/// Logarithmic nu grid, `per_decade` points per decade, inclusive of both ends.
inline std::vector<double> log_nu_grid(double lo, double hi, int per_decade = 20) {
  if (!(lo > 0.0 && hi > lo)) throw InvalidParameter("log_nu_grid: need 0 < lo < hi");
  const double llo = std::log10(lo), lhi = std::log10(hi);
  const int n = std::max(2, static_cast<int>(std::ceil((lhi - llo) * per_decade)) + 1);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] = std::pow(10.0, llo + (lhi - llo) * i / (n - 1));
  return out;
}

/// arg-min of the parametric MSE over the noise proportion at fixed budget T.
inline NuScanResult optimize_nu(const ParametricModel& model, const Vec& beta_star,
                                const Density& p_n, LossKind loss,
                                const std::vector<double>& nu_grid, double T,
                                const GridSpec& grid) {
  if (nu_grid.empty()) throw InvalidParameter("optimize_nu: empty nu grid");
  ParametricModel at = model;
  at.theta = beta_star(0);
  if (!model.normalized) at.c = beta_star(1);
  const ScoreModel sm = score_model(at);

  NuScanResult res;
  res.mse = std::numeric_limits<double>::infinity();
  for (double nu : nu_grid) {
    if (!(nu > 0.0)) throw InvalidParameter("optimize_nu: nu grid must be positive");
    double mse;
    try {
      const ScoreMoments mo = score_moments(sm, p_n, nu, loss, grid);
      mse = mse_parametric(sigma_matrix(mo, nu), nu, T);
    } catch (const Error&) {
      continue;
    }
    if (!std::isfinite(mse)) continue;
    res.scan.emplace_back(nu, mse);
    if (mse < res.mse) {
      res.mse = mse;
      res.nu_star = nu;
    }
  }
  if (!std::isfinite(res.mse))
    throw AllCandidatesInfeasible("optimize_nu: every nu candidate failed");
  return res;
}

// ---------------------------------------------------------------------------
// Histogram noise optimization (nonlinear conjugate gradient on free weights).
// ---------------------------------------------------------------------------

/// 2-D histogram on a tensor grid of bins (row-major weights).
struct Histogram2D {
  std::vector<double> xedges, yedges;
  std::vector<double> weights;  // (xbins * ybins), sums to 1

  std::size_t xbins() const { return xedges.size() - 1; }
  std::size_t ybins() const { return yedges.size() - 1; }
};

inline Density histogram2d_density(Histogram2D hist, std::string id = {}) {
  if (id.empty())
    id = "histogram2d(" + std::to_string(hist.xbins()) + "x" + std::to_string(hist.ybins()) + ")";
  auto shared = std::make_shared<Histogram2D>(std::move(hist));
  Density d;
  d.dims = 2;
  d.id = std::move(id);
  d.logpdf = [shared](const Point& p) {
    const double x = p(0), y = p(1);
    if (x < shared->xedges.front() || x > shared->xedges.back() || y < shared->yedges.front() ||
        y > shared->yedges.back())
      return -std::numeric_limits<double>::infinity();
    auto locate = [](const std::vector<double>& e, double v) {
      auto it = std::upper_bound(e.begin(), e.end(), v);
      std::size_t k = static_cast<std::size_t>(it - e.begin());
      k = (k == 0) ? 0 : k - 1;
      if (k >= e.size() - 1) k = e.size() - 2;
      return k;
    };
    const std::size_t i = locate(shared->xedges, x);
    const std::size_t j = locate(shared->yedges, y);
    const double area = (shared->xedges[i + 1] - shared->xedges[i]) *
                        (shared->yedges[j + 1] - shared->yedges[j]);
    const double w = shared->weights[i * shared->ybins() + j];
    return w > 0.0 ? std::log(w / area) : -std::numeric_limits<double>::infinity();
  };
  d.draw = [shared](Rng& rng) {
    double u = rng.uniform();
    std::size_t k = 0;
    for (; k + 1 < shared->weights.size(); ++k) {
      if (u < shared->weights[k]) break;
      u -= shared->weights[k];
    }
    const std::size_t i = k / shared->ybins();
    const std::size_t j = k % shared->ybins();
    return point2(rng.uniform(shared->xedges[i], shared->xedges[i + 1]),
                  rng.uniform(shared->yedges[j], shared->yedges[j + 1]));
  };
  return d;
}

namespace detail {

/// Precomputed quadrature tables for fast repeated MSE evaluation while the
/// histogram weights change. Bin lookups, p_d and psi at every node are fixed.
class HistogramMseEvaluator {
 public:
  HistogramMseEvaluator(const ScoreModel& sm, const GridSpec& grid,
                        std::vector<int> bin_of_node, std::vector<double> bin_area,
                        double nu, LossKind loss, NoiseObjective objective, double T,
                        const Mat& fisher_i)
      : dim_(sm.score_dim),
        nu_(nu),
        loss_(loss),
        objective_(objective),
        t_(T),
        fisher_i_(fisher_i),
        bin_of_node_(std::move(bin_of_node)),
        bin_area_(std::move(bin_area)) {
    grid.validate();
    const std::size_t count =
        grid.dims == 1 ? static_cast<std::size_t>(grid.n)
                       : static_cast<std::size_t>(grid.n) * static_cast<std::size_t>(grid.n);
    wq_.resize(count);
    pd_.resize(count);
    psi_.resize(count * static_cast<std::size_t>(dim_));
    std::size_t idx = 0;
    auto fill = [&](const Point& x, double wq) {
      wq_[idx] = wq;
      pd_[idx] = std::exp(sm.p_d.logpdf(x));
      const Vec s = sm.psi(x);
      for (int k = 0; k < dim_; ++k) psi_[idx * dim_ + k] = s(k);
      ++idx;
    };
    if (grid.dims == 1) {
      for (int i = 0; i < grid.n; ++i) fill(point1(grid.node(i)), grid.weight(i));
    } else {
      for (int i = 0; i < grid.n; ++i)
        for (int j = 0; j < grid.n; ++j)
          fill(point2(grid.node(i), grid.node(j)), grid.weight(i) * grid.weight(j));
    }
  }

  /// MSE for the given bin weights; +inf when the configuration is degenerate.
  double eval(const std::vector<double>& weights) const {
    Vec m_w = Vec::Zero(dim_);
    Mat i_w = Mat::Zero(dim_, dim_);
    Mat i_v = Mat::Zero(dim_, dim_);
    const std::size_t n = wq_.size();
    for (std::size_t idx = 0; idx < n; ++idx) {
      const int bin = bin_of_node_[idx];
      const double pd = pd_[idx];
      const double pn =
          bin >= 0 ? weights[static_cast<std::size_t>(bin)] / bin_area_[static_cast<std::size_t>(bin)]
                   : 0.0;
      if (pd == 0.0 && pn == 0.0) continue;
      double wpd = 0.0, vpd = 0.0;
      const double nupn = nu_ * pn;
      switch (loss_) {
        case LossKind::JS: {
          const double den = pd + nupn;
          wpd = den > 0.0 ? nupn * pd / den : 0.0;
          vpd = wpd;
          break;
        }
        case LossKind::KL:
          if (pn == 0.0 && pd > 0.0) return std::numeric_limits<double>::infinity();
          wpd = pd;
          vpd = pd + pd * pd / nupn;
          break;
        case LossKind::RevKL:
          if (pd == 0.0 && pn > 0.0) return std::numeric_limits<double>::infinity();
          wpd = nupn;
          vpd = pd > 0.0 ? nupn + nupn * nupn / pd : 0.0;
          break;
        case LossKind::H2:
          if ((pd == 0.0) != (pn == 0.0)) return std::numeric_limits<double>::infinity();
          wpd = 0.5 * std::sqrt(nupn * pd);
          vpd = 0.25 * (pd + nupn);
          break;
      }
      const double a = wq_[idx] * wpd;
      const double b = wq_[idx] * vpd;
      const double* s = &psi_[idx * static_cast<std::size_t>(dim_)];
      for (int r = 0; r < dim_; ++r) {
        m_w(r) += a * s[r];
        for (int c = 0; c < dim_; ++c) {
          i_w(r, c) += a * s[r] * s[c];
          i_v(r, c) += b * s[r] * s[c];
        }
      }
    }
    if (!m_w.allFinite() || !i_w.allFinite() || !i_v.allFinite())
      return std::numeric_limits<double>::infinity();
    try {
      ScoreMoments mo{m_w, i_w, loss_ == LossKind::JS ? i_w : i_v};
      const Mat sigma = sigma_matrix(mo, nu_);
      return objective_ == NoiseObjective::Parametric
                 ? mse_parametric(sigma, nu_, t_)
                 : mse_nonparametric(sigma, fisher_i_, nu_, t_);
    } catch (const DegenerateInformation&) {
      return std::numeric_limits<double>::infinity();
    }
  }

 private:
  int dim_;
  double nu_;
  LossKind loss_;
  NoiseObjective objective_;
  double t_;
  Mat fisher_i_;
  std::vector<int> bin_of_node_;
  std::vector<double> bin_area_;
  std::vector<double> wq_, pd_, psi_;
};

/// Clip-at-zero-and-renormalize projection of K-1 free weights onto the simplex
/// (the last bin takes the remaining mass).
inline DVec project_free_weights(const DVec& u) {
  const auto k_free = u.size();
  double total = 0.0;
  std::vector<double> w(static_cast<std::size_t>(k_free) + 1);
  for (Eigen::Index i = 0; i < k_free; ++i) {
    w[static_cast<std::size_t>(i)] = std::max(0.0, u(i));
    total += w[static_cast<std::size_t>(i)];
  }
  w.back() = std::max(0.0, 1.0 - total);
  total += w.back();
  DVec out(k_free);
  if (total <= 0.0) {
    out.setConstant(1.0 / static_cast<double>(k_free + 1));
    return out;
  }
  for (Eigen::Index i = 0; i < k_free; ++i) out(i) = w[static_cast<std::size_t>(i)] / total;
  return out;
}

inline std::vector<double> full_weights_from_free(const DVec& u) {
  std::vector<double> w(static_cast<std::size_t>(u.size()) + 1);
  double total = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    w[static_cast<std::size_t>(i)] = std::max(0.0, u(i));
    total += w[static_cast<std::size_t>(i)];
  }
  w.back() = std::max(0.0, 1.0 - total);
  return w;
}

}  // namespace detail

struct HistOptConfig {
  int max_iters = 100;
  double fd_step = 1e-6;
  double grad_tol = 1e-9;
  bool softmax = false;  // softmax reparameterization instead of clip-and-renormalize
  double T = 1.0;        // budget used for reported MSE values (argmin independent of T)
};

struct HistOptResult {
  HistogramDensity histogram;
  std::vector<double> trace;  // objective per accepted iterate, trace[0] = initial
  double final_mse = 0.0;
  int iterations = 0;
};

struct Hist2DOptResult {
  Histogram2D histogram;
  std::vector<double> trace;
  double final_mse = 0.0;
  int iterations = 0;
};

namespace detail {

template <typename MakeResult>
auto optimize_histogram_core(const HistogramMseEvaluator& evaluator, std::size_t bins,
                             const std::vector<double>& init_weights, const HistOptConfig& cfg,
                             const MakeResult& make_result) {
  NlcgConfig ncfg;
  ncfg.max_iters = cfg.max_iters;
  ncfg.fd_step = cfg.fd_step;
  ncfg.grad_tol = cfg.grad_tol;

  if (cfg.softmax) {
    // unconstrained logits z -> softmax weights; identity projection
    DVec z0(static_cast<Eigen::Index>(bins));
    for (std::size_t i = 0; i < bins; ++i)
      z0(static_cast<Eigen::Index>(i)) = std::log(std::max(init_weights[i], 1e-12));
    auto objective = [&evaluator, bins](const DVec& z) {
      const double zmax = z.maxCoeff();
      std::vector<double> w(bins);
      double total = 0.0;
      for (std::size_t i = 0; i < bins; ++i) {
        w[i] = std::exp(z(static_cast<Eigen::Index>(i)) - zmax);
        total += w[i];
      }
      for (auto& x : w) x /= total;
      return evaluator.eval(w);
    };
    auto identity = [](const DVec& z) { return z; };
    const NlcgResult r = nlcg_minimize(objective, identity, z0, ncfg);
    const double zmax = r.x.maxCoeff();
    std::vector<double> w(bins);
    double total = 0.0;
    for (std::size_t i = 0; i < bins; ++i) {
      w[i] = std::exp(r.x(static_cast<Eigen::Index>(i)) - zmax);
      total += w[i];
    }
    for (auto& x : w) x /= total;
    return make_result(w, r);
  }

  DVec u0(static_cast<Eigen::Index>(bins) - 1);
  for (std::size_t i = 0; i + 1 < bins; ++i) u0(static_cast<Eigen::Index>(i)) = init_weights[i];
  auto objective = [&evaluator](const DVec& u) {
    return evaluator.eval(full_weights_from_free(u));
  };
  auto project = [](const DVec& u) { return project_free_weights(u); };
  const NlcgResult r = nlcg_minimize(objective, project, u0, ncfg);
  return make_result(full_weights_from_free(r.x), r);
}

}  // namespace detail

/// Local minimization of the asymptotic error over the K-1 free bin weights.
inline HistOptResult optimize_noise_histogram(const ParametricModel& model, const Vec& beta_star,
                                              double nu, LossKind loss, NoiseObjective objective,
                                              const HistogramDensity& histogram_init,
                                              const HistOptConfig& cfg, const GridSpec& grid) {
  if (!(nu > 0.0)) throw InvalidParameter("optimize_noise_histogram: nu must be > 0");
  if (grid.dims != 1 || model.dims() != 1)
    throw UnsupportedModel("optimize_noise_histogram: use the 2-D overload for 2-D models");
  ParametricModel at = model;
  at.theta = beta_star(0);
  if (!model.normalized) at.c = beta_star(1);
  const ScoreModel sm = score_model(at);
  const FisherMatrices fm = fisher_matrices(at, grid);

  const auto& edges = histogram_init.edges;
  std::vector<int> bin_of_node(static_cast<std::size_t>(grid.n), -1);
  for (int i = 0; i < grid.n; ++i) {
    const double x = grid.node(i);
    if (x < edges.front() || x > edges.back()) continue;
    auto it = std::upper_bound(edges.begin(), edges.end(), x);
    std::size_t k = static_cast<std::size_t>(it - edges.begin());
    k = (k == 0) ? 0 : k - 1;
    if (k >= histogram_init.bins()) k = histogram_init.bins() - 1;
    bin_of_node[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  std::vector<double> areas(histogram_init.bins());
  for (std::size_t k = 0; k < areas.size(); ++k) areas[k] = edges[k + 1] - edges[k];

  const detail::HistogramMseEvaluator evaluator(sm, grid, std::move(bin_of_node), std::move(areas),
                                                nu, loss, objective, cfg.T, fm.I);
  return detail::optimize_histogram_core(
      evaluator, histogram_init.bins(), histogram_init.weights, cfg,
      [&](const std::vector<double>& w, const NlcgResult& r) {
        HistOptResult out;
        out.histogram.edges = histogram_init.edges;
        out.histogram.weights = w;
        out.trace = r.trace;
        out.final_mse = r.value;
        out.iterations = r.iterations;
        return out;
      });
}

/// 2-D variant on a tensor bin grid.
inline Hist2DOptResult optimize_noise_histogram2d(const ParametricModel& model, const Vec& beta_star,
                                                  double nu, LossKind loss,
                                                  NoiseObjective objective,
                                                  const Histogram2D& histogram_init,
                                                  const HistOptConfig& cfg, const GridSpec& grid) {
  if (!(nu > 0.0)) throw InvalidParameter("optimize_noise_histogram2d: nu must be > 0");
  if (grid.dims != 2 || model.dims() != 2)
    throw UnsupportedModel("optimize_noise_histogram2d: needs a 2-D model and grid");
  ParametricModel at = model;
  at.theta = beta_star(0);
  if (!model.normalized) at.c = beta_star(1);
  const ScoreModel sm = score_model(at);
  const FisherMatrices fm = fisher_matrices(at, grid);

  const std::size_t nx = histogram_init.xbins(), ny = histogram_init.ybins();
  auto locate = [](const std::vector<double>& e, double v) -> int {
    if (v < e.front() || v > e.back()) return -1;
    auto it = std::upper_bound(e.begin(), e.end(), v);
    std::size_t k = static_cast<std::size_t>(it - e.begin());
    k = (k == 0) ? 0 : k - 1;
    if (k >= e.size() - 1) k = e.size() - 2;
    return static_cast<int>(k);
  };
  std::vector<int> bin_of_node(static_cast<std::size_t>(grid.n) * grid.n, -1);
  for (int i = 0; i < grid.n; ++i)
    for (int j = 0; j < grid.n; ++j) {
      const int bx = locate(histogram_init.xedges, grid.node(i));
      const int by = locate(histogram_init.yedges, grid.node(j));
      if (bx >= 0 && by >= 0)
        bin_of_node[static_cast<std::size_t>(i) * grid.n + j] =
            bx * static_cast<int>(ny) + by;
    }
  std::vector<double> areas(nx * ny);
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j)
      areas[i * ny + j] = (histogram_init.xedges[i + 1] - histogram_init.xedges[i]) *
                          (histogram_init.yedges[j + 1] - histogram_init.yedges[j]);

  const detail::HistogramMseEvaluator evaluator(sm, grid, std::move(bin_of_node), std::move(areas),
                                                nu, loss, objective, cfg.T, fm.I);
  return detail::optimize_histogram_core(
      evaluator, nx * ny, histogram_init.weights, cfg,
      [&](const std::vector<double>& w, const NlcgResult& r) {
        Hist2DOptResult out;
        out.histogram = histogram_init;
        out.histogram.weights = w;
        out.trace = r.trace;
        out.final_mse = r.value;
        out.iterations = r.iterations;
        return out;
      });
}

/// Bin-average a density into histogram weights (used for initialization and
/// for comparing against the theoretical limit densities).
inline std::vector<double> binned_weights(const Density& density, const std::vector<double>& edges,
                                          int nodes_per_bin = 64) {
  std::vector<double> w(edges.size() - 1, 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
    GridSpec cell{edges[k], edges[k + 1], nodes_per_bin, 1};
    w[k] = integrate_grid(
        std::function<double(double)>([&](double x) { return std::exp(density.logpdf(point1(x))); }),
        cell);
    total += w[k];
  }
  for (auto& x : w) x /= total;
  return w;
}

/// Total-variation distance between two weight vectors on the same bins.
inline double binned_tv_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InvalidParameter("binned_tv_distance: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

}  // namespace ncelab
