#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "ncelab/errors.hpp"
#include "ncelab/integrate.hpp"
#include "ncelab/rng.hpp"
#include "ncelab/types.hpp"

namespace ncelab {

inline constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2*pi)

enum class Family { GaussMean1D, GaussVar1D, GaussCorr2D };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::GaussMean1D: return "gauss_mean_1d";
    case Family::GaussVar1D: return "gauss_var_1d";
    case Family::GaussCorr2D: return "gauss_corr_2d";
  }
  return "?";
}

/// Gaussian toy model with a scalar parameter theta, optionally extended by a
/// free log-normalizer c (generalized parameter beta = (theta, c), score -1 in c).
struct ParametricModel {
  Family family = Family::GaussMean1D;
  double theta = 0.0;
  bool normalized = true;
  double c = 0.0;  // used iff !normalized

  int dims() const { return family == Family::GaussCorr2D ? 2 : 1; }
  int param_dim() const { return normalized ? 1 : 2; }

  Vec beta() const {
    Vec b(param_dim());
    b(0) = theta;
    if (!normalized) b(1) = c;
    return b;
  }
};

inline void check_theta(Family family, double theta) {
  if (family == Family::GaussVar1D && !(theta > 0.0))
    throw InvalidParameter("gauss_var_1d requires theta > 0");
  if (family == Family::GaussCorr2D && !(theta > -1.0 && theta < 1.0))
    throw InvalidParameter("gauss_corr_2d requires theta in (-1, 1)");
  if (!std::isfinite(theta)) throw InvalidParameter("theta must be finite");
}

/// log of the energy p~(x; theta), without any normalizer.
inline double log_energy(Family family, double theta, const Point& x) {
  switch (family) {
    case Family::GaussMean1D: {
      const double d = x(0) - theta;
      return -0.5 * d * d;
    }
    case Family::GaussVar1D:
      return -0.5 * x(0) * x(0) / theta;
    case Family::GaussCorr2D: {
      const double a = x(0), b = x(1);
      return -0.5 * (a * a - 2.0 * theta * a * b + b * b) / (1.0 - theta * theta);
    }
  }
  return 0.0;
}

inline double log_normalizer(Family family, double theta) {
  switch (family) {
    case Family::GaussMean1D: return 0.5 * kLogTwoPi;
    case Family::GaussVar1D: return 0.5 * (kLogTwoPi + std::log(theta));
    case Family::GaussCorr2D: return kLogTwoPi + 0.5 * std::log1p(-theta * theta);
  }
  return 0.0;
}

/// d log Z / d theta of the family normalizer.
inline double log_normalizer_dtheta(Family family, double theta) {
  switch (family) {
    case Family::GaussMean1D: return 0.0;
    case Family::GaussVar1D: return 0.5 / theta;
    case Family::GaussCorr2D: return -theta / (1.0 - theta * theta);
  }
  return 0.0;
}

/// d log p~ / d theta (energy score).
inline double energy_score(Family family, double theta, const Point& x) {
  switch (family) {
    case Family::GaussMean1D: return x(0) - theta;
    case Family::GaussVar1D: return 0.5 * x(0) * x(0) / (theta * theta);
    case Family::GaussCorr2D: {
      const double a = x(0), b = x(1);
      const double one = 1.0 - theta * theta;
      return (a * b * one - theta * (a * a - 2.0 * theta * a * b + b * b)) / (one * one);
    }
  }
  return 0.0;
}

/// Model log-density at an arbitrary generalized parameter beta.
inline double model_logpdf(const ParametricModel& model, const Vec& beta, const Point& x) {
  const double theta = beta(0);
  check_theta(model.family, theta);
  const double le = log_energy(model.family, theta, x);
  return model.normalized ? le - log_normalizer(model.family, theta) : le - beta(1);
}

inline double model_logpdf(const ParametricModel& model, const Point& x) {
  return model_logpdf(model, model.beta(), x);
}

/// Generalized Fisher score psi(x) = grad_beta log p(x; beta), with the
/// constant -1 component for the free log-normalizer of unnormalized models.
inline Vec model_score(const ParametricModel& model, const Vec& beta, const Point& x) {
  const double theta = beta(0);
  check_theta(model.family, theta);
  Vec s(model.param_dim());
  if (model.normalized) {
    s(0) = energy_score(model.family, theta, x) - log_normalizer_dtheta(model.family, theta);
  } else {
    s(0) = energy_score(model.family, theta, x);
    s(1) = -1.0;
  }
  return s;
}

inline Vec model_score(const ParametricModel& model, const Point& x) {
  return model_score(model, model.beta(), x);
}

/// Score of the normalized parameterization (used for the classical Fisher
/// information J regardless of how the model itself is parameterized).
inline double normalized_score(Family family, double theta, const Point& x) {
  return energy_score(family, theta, x) - log_normalizer_dtheta(family, theta);
}

// ---------------------------------------------------------------------------
// Density: log-density + seeded sampler. Immutable after construction.
// ---------------------------------------------------------------------------

struct Density {
  int dims = 1;
  std::string id;
  std::function<double(const Point&)> logpdf;
  std::function<Point(Rng&)> draw;
};

inline Density normal1d(double mu, double var, std::string id = {}) {
  if (!(var > 0.0)) throw InvalidParameter("normal1d requires var > 0");
  if (id.empty()) id = "gauss(mu=" + std::to_string(mu) + ",var=" + std::to_string(var) + ")";
  const double sd = std::sqrt(var);
  const double lognorm = 0.5 * (kLogTwoPi + std::log(var));
  Density d;
  d.dims = 1;
  d.id = std::move(id);
  d.logpdf = [mu, var, lognorm](const Point& x) {
    const double z = x(0) - mu;
    return -0.5 * z * z / var - lognorm;
  };
  d.draw = [mu, sd](Rng& rng) { return point1(mu + sd * rng.normal()); };
  return d;
}

inline Density gauss_corr2d(double rho, std::string id = {}) {
  if (!(rho > -1.0 && rho < 1.0)) throw InvalidParameter("gauss_corr2d requires |rho| < 1");
  if (id.empty()) id = "gauss2d(rho=" + std::to_string(rho) + ")";
  const double one = 1.0 - rho * rho;
  const double lognorm = kLogTwoPi + 0.5 * std::log(one);
  Density d;
  d.dims = 2;
  d.id = std::move(id);
  d.logpdf = [rho, one, lognorm](const Point& x) {
    const double a = x(0), b = x(1);
    return -0.5 * (a * a - 2.0 * rho * a * b + b * b) / one - lognorm;
  };
  const double t = std::sqrt(one);
  d.draw = [rho, t](Rng& rng) {
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    return point2(z1, rho * z1 + t * z2);
  };
  return d;
}

/// The true data law p_d of a (well-specified) model at its own theta.
inline Density data_density(const ParametricModel& model) {
  check_theta(model.family, model.theta);
  switch (model.family) {
    case Family::GaussMean1D: return normal1d(model.theta, 1.0);
    case Family::GaussVar1D: return normal1d(0.0, model.theta);
    case Family::GaussCorr2D: return gauss_corr2d(model.theta);
  }
  throw InvalidParameter("unknown family");
}

/// n i.i.d. draws, deterministic under the seed.
inline std::vector<Point> sample(const Density& density, std::int64_t n, std::uint64_t seed) {
  if (n < 1) throw InvalidParameter("sample: n must be >= 1");
  Rng rng(seed);
  std::vector<Point> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out.push_back(density.draw(rng));
  return out;
}

// ---------------------------------------------------------------------------
// HistogramDensity: piecewise-constant noise model on [edges.front(), edges.back()].
// ---------------------------------------------------------------------------

struct HistogramDensity {
  std::vector<double> edges;    // K+1, strictly increasing
  std::vector<double> weights;  // K, bin probabilities summing to 1

  std::size_t bins() const { return weights.size(); }

  double pdf(double x) const {
    if (x < edges.front() || x > edges.back()) return 0.0;
    // half-open bins [e_k, e_{k+1}), last bin closed
    auto it = std::upper_bound(edges.begin(), edges.end(), x);
    std::size_t k = static_cast<std::size_t>(it - edges.begin());
    k = (k == 0) ? 0 : k - 1;
    if (k >= bins()) k = bins() - 1;
    return weights[k] / (edges[k + 1] - edges[k]);
  }
};

/// Build a histogram from the K-1 free bin weights; the last bin takes the
/// remaining mass. Tiny negatives (> -1e-12) are clipped to zero.
inline HistogramDensity make_histogram(std::vector<double> edges, std::vector<double> free_weights) {
  if (edges.size() < 2) throw InvalidParameter("make_histogram: need at least 2 edges");
  for (std::size_t i = 0; i + 1 < edges.size(); ++i)
    if (!(edges[i] < edges[i + 1]))
      throw InvalidParameter("make_histogram: edges must be strictly increasing");
  const std::size_t k = edges.size() - 1;
  if (free_weights.size() != k - 1)
    throw InvalidParameter("make_histogram: expected K-1 free weights");

  double total = 0.0;
  for (auto& w : free_weights) {
    if (w < -1e-12) throw NormalizationViolation("make_histogram: negative free weight");
    if (w < 0.0) w = 0.0;
    total += w;
  }
  if (total > 1.0 + 1e-12) throw NormalizationViolation("make_histogram: free weights sum to > 1");

  HistogramDensity h;
  h.edges = std::move(edges);
  h.weights = std::move(free_weights);
  h.weights.push_back(std::max(0.0, 1.0 - total));
  return h;
}

inline std::vector<double> default_histogram_edges_1d(int k = 50, double lo = -5.0, double hi = 5.0) {
  std::vector<double> edges(static_cast<std::size_t>(k) + 1);
  for (int i = 0; i <= k; ++i) edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / k;
  return edges;
}

inline Density histogram_density(HistogramDensity hist, std::string id = {}) {
  if (id.empty()) id = "histogram(K=" + std::to_string(hist.bins()) + ")";
  auto shared = std::make_shared<HistogramDensity>(std::move(hist));
  // cumulative bin masses for inverse-CDF sampling
  auto cum = std::make_shared<std::vector<double>>();
  cum->reserve(shared->bins());
  double acc = 0.0;
  for (double w : shared->weights) {
    acc += w;
    cum->push_back(acc);
  }
  Density d;
  d.dims = 1;
  d.id = std::move(id);
  d.logpdf = [shared](const Point& x) {
    const double p = shared->pdf(x(0));
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  };
  d.draw = [shared, cum](Rng& rng) {
    const double u = rng.uniform() * cum->back();
    auto it = std::lower_bound(cum->begin(), cum->end(), u);
    std::size_t k = static_cast<std::size_t>(it - cum->begin());
    if (k >= shared->bins()) k = shared->bins() - 1;
    // uniform placement inside the bin
    return point1(rng.uniform(shared->edges[k], shared->edges[k + 1]));
  };
  return d;
}

// ---------------------------------------------------------------------------
// GridDensity: piecewise-linear density tabulated on the nodes of a GridSpec.
// Used for the theoretical optimal-noise constructions.
// ---------------------------------------------------------------------------

struct GridDensity1D {
  GridSpec grid;                // dims == 1
  std::vector<double> values;   // pdf at nodes, normalized to trapezoid mass 1

  double pdf(double x) const {
    if (x < grid.lo || x > grid.hi) return 0.0;
    const double t = (x - grid.lo) / grid.step();
    int i = static_cast<int>(t);
    if (i >= grid.n - 1) i = grid.n - 2;
    const double frac = t - i;
    return values[static_cast<std::size_t>(i)] * (1.0 - frac) +
           values[static_cast<std::size_t>(i) + 1] * frac;
  }
};

inline GridDensity1D make_grid_density_1d(const GridSpec& grid,
                                          const std::function<double(double)>& unnormalized) {
  GridDensity1D g;
  g.grid = grid;
  g.values.resize(static_cast<std::size_t>(grid.n));
  for (int i = 0; i < grid.n; ++i) {
    const double v = unnormalized(grid.node(i));
    if (!std::isfinite(v) || v < 0.0)
      throw NonFiniteIntegrand("grid density: invalid unnormalized value");
    g.values[static_cast<std::size_t>(i)] = v;
  }
  std::vector<double> terms(g.values.size());
  for (int i = 0; i < grid.n; ++i)
    terms[static_cast<std::size_t>(i)] = grid.weight(i) * g.values[static_cast<std::size_t>(i)];
  const double mass = pairwise_sum(terms);
  if (!(mass > 0.0)) throw NonFiniteIntegrand("grid density: zero total mass");
  for (auto& v : g.values) v /= mass;
  return g;
}

inline Density grid_density(GridDensity1D g, std::string id = {}) {
  if (id.empty()) id = "grid_density(n=" + std::to_string(g.grid.n) + ")";
  auto shared = std::make_shared<GridDensity1D>(std::move(g));
  // per-cell trapezoid masses for sampling
  auto cum = std::make_shared<std::vector<double>>();
  const auto& gd = *shared;
  cum->reserve(static_cast<std::size_t>(gd.grid.n) - 1);
  double acc = 0.0;
  for (int i = 0; i + 1 < gd.grid.n; ++i) {
    acc += 0.5 * (gd.values[static_cast<std::size_t>(i)] + gd.values[static_cast<std::size_t>(i) + 1]) *
           gd.grid.step();
    cum->push_back(acc);
  }
  Density d;
  d.dims = 1;
  d.id = std::move(id);
  d.logpdf = [shared](const Point& x) {
    const double p = shared->pdf(x(0));
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  };
  d.draw = [shared, cum](Rng& rng) {
    const double u = rng.uniform() * cum->back();
    auto it = std::lower_bound(cum->begin(), cum->end(), u);
    std::size_t cell = static_cast<std::size_t>(it - cum->begin());
    if (cell + 2 > shared->values.size()) cell = shared->values.size() - 2;
    // inverse CDF within the cell for a linear density segment
    const double a = shared->values[cell];
    const double b = shared->values[cell + 1];
    const double h = shared->grid.step();
    const double mass = 0.5 * (a + b) * h;
    const double prev = cell == 0 ? 0.0 : (*cum)[cell - 1];
    const double r = mass > 0.0 ? (u - prev) / mass : rng.uniform();
    double t;  // position in [0,1] within the cell
    const double slope = b - a;
    if (std::abs(slope) < 1e-14 * (a + b + 1e-300)) {
      t = r;
    } else {
      // solve (a*t + slope*t^2/2) = r*(a + slope/2)
      const double disc = a * a + slope * (2.0 * r * (a + 0.5 * slope));
      t = (std::sqrt(std::max(0.0, disc)) - a) / slope;
      t = std::clamp(t, 0.0, 1.0);
    }
    return point1(shared->grid.lo + (static_cast<double>(cell) + t) * h);
  };
  return d;
}

struct GridDensity2D {
  GridSpec grid;               // dims == 2, shared per axis
  std::vector<double> values;  // row-major n*n, pdf at nodes

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * grid.n + j]; }

  double pdf(double x, double y) const {
    if (x < grid.lo || x > grid.hi || y < grid.lo || y > grid.hi) return 0.0;
    const double h = grid.step();
    double tx = (x - grid.lo) / h, ty = (y - grid.lo) / h;
    int i = static_cast<int>(tx), j = static_cast<int>(ty);
    if (i >= grid.n - 1) i = grid.n - 2;
    if (j >= grid.n - 1) j = grid.n - 2;
    const double fx = tx - i, fy = ty - j;
    return at(i, j) * (1 - fx) * (1 - fy) + at(i + 1, j) * fx * (1 - fy) +
           at(i, j + 1) * (1 - fx) * fy + at(i + 1, j + 1) * fx * fy;
  }
};

inline GridDensity2D make_grid_density_2d(const GridSpec& grid,
                                          const std::function<double(const Point&)>& unnormalized) {
  GridDensity2D g;
  g.grid = grid;
  g.values.resize(static_cast<std::size_t>(grid.n) * grid.n);
  for (int i = 0; i < grid.n; ++i)
    for (int j = 0; j < grid.n; ++j) {
      const double v = unnormalized(point2(grid.node(i), grid.node(j)));
      if (!std::isfinite(v) || v < 0.0)
        throw NonFiniteIntegrand("grid density: invalid unnormalized value");
      g.values[static_cast<std::size_t>(i) * grid.n + j] = v;
    }
  std::vector<double> rows(static_cast<std::size_t>(grid.n));
  std::vector<double> terms(static_cast<std::size_t>(grid.n));
  for (int i = 0; i < grid.n; ++i) {
    for (int j = 0; j < grid.n; ++j) terms[static_cast<std::size_t>(j)] = grid.weight(j) * g.at(i, j);
    rows[static_cast<std::size_t>(i)] = grid.weight(i) * pairwise_sum(terms);
  }
  const double mass = pairwise_sum(rows);
  if (!(mass > 0.0)) throw NonFiniteIntegrand("grid density: zero total mass");
  for (auto& v : g.values) v /= mass;
  return g;
}

inline Density grid_density(GridDensity2D g, std::string id = {}) {
  if (id.empty()) id = "grid_density2d(n=" + std::to_string(g.grid.n) + ")";
  auto shared = std::make_shared<GridDensity2D>(std::move(g));
  // cell masses (bilinear mean of the 4 corners) for sampling
  auto cum = std::make_shared<std::vector<double>>();
  const auto& gd = *shared;
  const int nc = gd.grid.n - 1;
  cum->reserve(static_cast<std::size_t>(nc) * nc);
  const double cell_area = gd.grid.step() * gd.grid.step();
  double acc = 0.0;
  for (int i = 0; i < nc; ++i)
    for (int j = 0; j < nc; ++j) {
      acc += 0.25 * (gd.at(i, j) + gd.at(i + 1, j) + gd.at(i, j + 1) + gd.at(i + 1, j + 1)) * cell_area;
      cum->push_back(acc);
    }
  Density d;
  d.dims = 2;
  d.id = std::move(id);
  d.logpdf = [shared](const Point& x) {
    const double p = shared->pdf(x(0), x(1));
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  };
  d.draw = [shared, cum, nc](Rng& rng) {
    const double u = rng.uniform() * cum->back();
    auto it = std::lower_bound(cum->begin(), cum->end(), u);
    std::size_t cell = static_cast<std::size_t>(it - cum->begin());
    if (cell >= cum->size()) cell = cum->size() - 1;
    const int i = static_cast<int>(cell) / nc;
    const int j = static_cast<int>(cell) % nc;
    // uniform placement inside the cell; adequate at this grid resolution
    const double h = shared->grid.step();
    const double x = shared->grid.lo + (i + rng.uniform()) * h;
    const double y = shared->grid.lo + (j + rng.uniform()) * h;
    return point2(x, y);
  };
  return d;
}

// ---------------------------------------------------------------------------
// Fisher matrices
// ---------------------------------------------------------------------------

struct FisherMatrices {
  Vec m;  // generalized score mean over p_d
  Mat I;  // generalized score covariance E_d[psi psi^T]
  Mat J;  // classical Fisher information of the normalized parameterization
};

inline FisherMatrices fisher_matrices(const ParametricModel& model, const GridSpec& grid) {
  check_theta(model.family, model.theta);
  const Density pd = data_density(model);
  const int d = model.param_dim();
  FisherMatrices out;
  out.m = Vec::Zero(d);
  out.I = Mat::Zero(d, d);
  out.J = Mat::Zero(1, 1);

  auto accumulate = [&](const Point& x, double wq) {
    const double w = wq * std::exp(pd.logpdf(x));
    const Vec psi = model_score(model, x);
    out.m += w * psi;
    out.I += w * (psi * psi.transpose());
    const double ns = normalized_score(model.family, model.theta, x);
    out.J(0, 0) += w * ns * ns;
  };

  grid.validate();
  if (grid.dims == 1) {
    for (int i = 0; i < grid.n; ++i) accumulate(point1(grid.node(i)), grid.weight(i));
  } else {
    for (int i = 0; i < grid.n; ++i)
      for (int j = 0; j < grid.n; ++j)
        accumulate(point2(grid.node(i), grid.node(j)), grid.weight(i) * grid.weight(j));
  }
  if (!out.m.allFinite() || !out.I.allFinite() || !out.J.allFinite())
    throw NonFiniteIntegrand("fisher_matrices: non-finite quadrature");
  return out;
}

inline GridSpec default_grid_for(const ParametricModel& model) {
  return model.dims() == 1 ? kDefaultGrid1D : kDefaultGrid2D;
}

}  // namespace ncelab
