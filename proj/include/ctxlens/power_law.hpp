#pragma once

#include "ctxlens/error.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

namespace ctxlens {

/**
 * y = scale * x^(-exponent), fitted by least squares on (log x, log y).
 *
 * `exponent` is the decay rate (positive for decreasing data). The log-log
 * slope, which is how histograms are usually reported (e.g. -2.63 for a
 * steeply decaying MCL histogram), is `slope() == -exponent`.
 */
struct PowerLawFit {
  double scale = 0.0;
  double exponent = 0.0;
  double r_squared = 0.0;

  double slope() const noexcept { return -exponent; }
  double operator()(double x) const { return scale * std::pow(x, -exponent); }
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Requires at least two distinct x values; all coordinates must be positive.
inline PowerLawFit fit_power_law(std::span<const Point> points) {
  for (const auto& p : points)
    if (!(p.x > 0.0) || !(p.y > 0.0)) throw DataError("power-law fit needs positive x and y");

  std::vector<double> xs;
  xs.reserve(points.size());
  for (const auto& p : points) xs.push_back(p.x);
  std::sort(xs.begin(), xs.end());
  if (std::unique(xs.begin(), xs.end()) - xs.begin() < 2) throw InsufficientDataError();

  const auto n = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : points) {
    mx += std::log(p.x);
    my += std::log(p.y);
  }
  mx /= n;
  my /= n;

  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : points) {
    const double dx = std::log(p.x) - mx;
    const double dy = std::log(p.y) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;

  double ss_res = 0.0;
  for (const auto& p : points) {
    const double r = std::log(p.y) - (intercept + slope * std::log(p.x));
    ss_res += r * r;
  }
  // Constant y: the fit is exact (slope 0) and r^2 is taken as 1.
  const double r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;

  return PowerLawFit{std::exp(intercept), -slope, std::clamp(r2, 0.0, 1.0)};
}

inline PowerLawFit fit_power_law(const std::vector<Point>& points) {
  return fit_power_law(std::span<const Point>(points));
}

}  // namespace ctxlens
