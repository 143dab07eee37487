#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ncelab/errors.hpp"
#include "ncelab/rng.hpp"
#include "ncelab/types.hpp"

namespace ncelab {

/// Tensor-product trapezoid grid over [lo, hi]^dims.
struct GridSpec {
  double lo = -10.0;
  double hi = 10.0;
  int n = 2001;  // nodes per axis
  int dims = 1;

  void validate() const {
    if (!(lo < hi)) throw InvalidParameter("GridSpec: lo must be < hi");
    if (n < 3) throw InvalidParameter("GridSpec: need at least 3 nodes");
    if (dims != 1 && dims != 2) throw InvalidParameter("GridSpec: dims must be 1 or 2");
  }

  double step() const { return (hi - lo) / static_cast<double>(n - 1); }
  double node(int i) const { return lo + step() * static_cast<double>(i); }
  // trapezoid weight along one axis
  double weight(int i) const { return (i == 0 || i == n - 1) ? 0.5 * step() : step(); }
};

inline constexpr GridSpec kDefaultGrid1D{-10.0, 10.0, 2001, 1};
inline constexpr GridSpec kDefaultGrid2D{-8.0, 8.0, 501, 2};

struct McSpec {
  std::int64_t n_samples = 0;
  std::uint64_t seed = 0;
};

/// Deterministic pairwise (tree) reduction; independent of any parallel evaluation order.
inline double pairwise_sum(const std::vector<double>& v) {
  std::vector<double> buf = v;
  std::size_t n = buf.size();
  while (n > 1) {
    const std::size_t half = n / 2;
    for (std::size_t i = 0; i < half; ++i) buf[i] = buf[2 * i] + buf[2 * i + 1];
    if (n % 2 == 1) {
      buf[half] = buf[n - 1];
      n = half + 1;
    } else {
      n = half;
    }
  }
  return buf.empty() ? 0.0 : buf[0];
}

namespace detail {

inline void require_finite(double y, double x0, double x1, int dims) {
  if (!std::isfinite(y)) {
    std::string where = dims == 1 ? "x=" + std::to_string(x0)
                                  : "x=(" + std::to_string(x0) + "," + std::to_string(x1) + ")";
    throw NonFiniteIntegrand("integrand is not finite at grid node " + where);
  }
}

}  // namespace detail

/// Composite trapezoid approximation of the integral of f over [lo,hi]^dims.
inline double integrate_grid(const std::function<double(const Point&)>& f, const GridSpec& spec) {
  spec.validate();
  if (spec.dims == 1) {
    std::vector<double> terms(static_cast<std::size_t>(spec.n));
    for (int i = 0; i < spec.n; ++i) {
      const double x = spec.node(i);
      const double y = f(point1(x));
      detail::require_finite(y, x, 0.0, 1);
      terms[static_cast<std::size_t>(i)] = spec.weight(i) * y;
    }
    return pairwise_sum(terms);
  }
  std::vector<double> rows(static_cast<std::size_t>(spec.n));
  std::vector<double> terms(static_cast<std::size_t>(spec.n));
  for (int i = 0; i < spec.n; ++i) {
    const double x = spec.node(i);
    for (int j = 0; j < spec.n; ++j) {
      const double y = spec.node(j);
      const double val = f(point2(x, y));
      detail::require_finite(val, x, y, 2);
      terms[static_cast<std::size_t>(j)] = spec.weight(j) * val;
    }
    rows[static_cast<std::size_t>(i)] = spec.weight(i) * pairwise_sum(terms);
  }
  return pairwise_sum(rows);
}

/// 1-D convenience overload.
inline double integrate_grid(const std::function<double(double)>& f, const GridSpec& spec) {
  return integrate_grid([&f](const Point& p) { return f(p(0)); }, spec);
}

/// Sample mean and standard error of f over exactly n_samples draws.
/// Deterministic under a fixed seed: the sampler stream is created here.
template <typename Sampler, typename F>
std::pair<double, double> mc_expectation(const Sampler& draw, const F& f, const McSpec& spec) {
  if (spec.n_samples < 1) throw InvalidParameter("McSpec: n_samples must be >= 1");
  Rng rng(spec.seed);
  double sum = 0.0, sumsq = 0.0, comp = 0.0;
  const auto n = spec.n_samples;
  for (std::int64_t i = 0; i < n; ++i) {
    const double y = f(draw(rng));
    if (!std::isfinite(y)) throw NonFiniteIntegrand("mc_expectation: non-finite sample value");
    // Kahan-compensated running sum keeps the reduction order fixed.
    const double t = y - comp;
    const double s = sum + t;
    comp = (s - sum) - t;
    sum = s;
    sumsq += y * y;
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sumsq / static_cast<double>(n) - mean * mean);
  const double stderr_ = std::sqrt(var / static_cast<double>(n));
  return {mean, stderr_};
}

/// Number of worker threads: hardware capped by NCE_LAB_THREADS.
inline int worker_threads() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("NCE_LAB_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1 && static_cast<unsigned>(cap) < hw) hw = static_cast<unsigned>(cap);
  }
  return static_cast<int>(hw);
}

/// Run fn(i) for i in [0, n). Each index must write only its own slot so the
/// result is independent of scheduling.
template <typename F>
void parallel_for(std::int64_t n, const F& fn) {
  const int nthreads = std::min<std::int64_t>(worker_threads(), n);
  if (nthreads <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(nthreads));
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (int t = 0; t < nthreads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::int64_t i = t; i < n; i += nthreads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ncelab
