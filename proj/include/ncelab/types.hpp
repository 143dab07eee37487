#pragma once

#include <Eigen/Dense>

namespace ncelab {

// Parameter vectors are at most (theta, c) and sample points at most 2-D, so
// fixed-capacity dynamic types keep everything on the stack.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 4, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 4, 4>;
using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 2, 1>;

inline Point point1(double x) {
  Point p(1);
  p(0) = x;
  return p;
}

inline Point point2(double x, double y) {
  Point p(2);
  p(0) = x;
  p(1) = y;
  return p;
}

}  // namespace ncelab
