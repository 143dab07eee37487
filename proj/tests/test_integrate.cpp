#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "ncelab/integrate.hpp"

using namespace ncelab;

namespace {

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

}  // namespace

TEST_CASE("trapezoid integrates the standard normal to 1", "[integrate]") {
  const double v = integrate_grid(std::function<double(double)>(normal_pdf), kDefaultGrid1D);
  CHECK(v == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("trapezoid second moment of the standard normal", "[integrate]") {
  const double v = integrate_grid(
      std::function<double(double)>([](double x) { return x * x * normal_pdf(x); }),
      kDefaultGrid1D);
  CHECK(v == Catch::Approx(1.0).margin(1e-8));
}

TEST_CASE("trapezoid fourth moment matches a high-resolution rerun", "[integrate]") {
  auto f = std::function<double(double)>(
      [](double x) { return x * x * x * x * normal_pdf(x); });
  const double v = integrate_grid(f, kDefaultGrid1D);
  const double oracle = integrate_grid(f, GridSpec{-10.0, 10.0, 20001, 1});
  CHECK(v == Catch::Approx(3.0).margin(1e-7));
  CHECK(v == Catch::Approx(oracle).margin(1e-9));
}

TEST_CASE("2-D grid integrates a product normal to 1", "[integrate]") {
  auto f = std::function<double(const Point&)>(
      [](const Point& p) { return normal_pdf(p(0)) * normal_pdf(p(1)); });
  const double v = integrate_grid(f, kDefaultGrid2D);
  CHECK(v == Catch::Approx(1.0).margin(1e-8));
}

TEST_CASE("non-finite integrand raises", "[integrate]") {
  auto f = std::function<double(double)>(
      [](double x) { return x == 0.0 ? std::numeric_limits<double>::infinity() : 1.0; });
  CHECK_THROWS_AS(integrate_grid(f, GridSpec{-1.0, 1.0, 11, 1}), NonFiniteIntegrand);
}

TEST_CASE("doubling nodes shows second-order convergence on a truncated interval",
          "[integrate]") {
  // On [0, 2] the endpoint derivatives of x^2 phi(x) are nonzero, so the h^2
  // Euler-Maclaurin term dominates and halving h divides the error by ~4.
  auto f = std::function<double(double)>([](double x) { return x * x * normal_pdf(x); });
  const double exact = integrate_grid(f, GridSpec{0.0, 2.0, 40001, 1});
  const double e1 = std::abs(integrate_grid(f, GridSpec{0.0, 2.0, 17, 1}) - exact);
  const double e2 = std::abs(integrate_grid(f, GridSpec{0.0, 2.0, 33, 1}) - exact);
  const double e3 = std::abs(integrate_grid(f, GridSpec{0.0, 2.0, 65, 1}) - exact);
  CHECK(e1 / e2 == Catch::Approx(4.0).margin(0.5));
  CHECK(e2 / e3 == Catch::Approx(4.0).margin(0.5));
}

TEST_CASE("mc_expectation recovers simple normal moments", "[integrate][mc]") {
  auto draw = [](Rng& rng) { return rng.normal(); };
  McSpec spec{1'000'000, 42};

  auto [m1, se1] = mc_expectation(draw, [](double x) { return x; }, spec);
  CHECK(std::abs(m1 - 0.0) < 3.0 * se1);

  auto [m2, se2] = mc_expectation(draw, [](double x) { return x * x; }, spec);
  CHECK(std::abs(m2 - 1.0) < 3.0 * se2);

  auto [m3, se3] = mc_expectation(draw, [](double x) { return x > 0.0 ? 1.0 : 0.0; }, spec);
  CHECK(std::abs(m3 - 0.5) < 3.0 * se3);
}

TEST_CASE("mc_expectation is bit-identical across calls", "[integrate][mc][determinism]") {
  auto draw = [](Rng& rng) { return rng.normal(); };
  McSpec spec{100'000, 7};
  auto a = mc_expectation(draw, [](double x) { return std::sin(x); }, spec);
  auto b = mc_expectation(draw, [](double x) { return std::sin(x); }, spec);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}
