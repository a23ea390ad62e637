#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ppx/grid.hpp"
#include "ppx/parallel.hpp"

namespace ppx {

namespace detail {

/// Centered B-spline of odd degree n (1, 3 or 5) evaluated at t.
inline double bspline(int n, double t) {
  const double a = std::abs(t);
  switch (n) {
    case 1:
      return a < 1.0 ? 1.0 - a : 0.0;
    case 3:
      if (a < 1.0) return 2.0 / 3.0 - a * a + 0.5 * a * a * a;
      if (a < 2.0) {
        const double b = 2.0 - a;
        return b * b * b / 6.0;
      }
      return 0.0;
    case 5: {
      if (a >= 3.0) return 0.0;
      // truncated-power form: (1/120) sum_k C(6,k) (-1)^k (a + 3 - k)_+^5
      static constexpr double binom[7] = {1, 6, 15, 20, 15, 6, 1};
      double s = 0.0;
      for (int k = 0; k < 7; ++k) {
        const double r = a + 3.0 - k;
        if (r <= 0.0) break;
        const double r2 = r * r;
        s += ((k % 2) ? -binom[k] : binom[k]) * r2 * r2 * r;
      }
      return s / 120.0;
    }
    default:
      throw ContractViolation("unsupported spline order " + std::to_string(n));
  }
}

inline int mirror_index(int k, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  k = k < 0 ? -k : k;
  k %= period;
  return k >= n ? period - k : k;
}

inline std::vector<double> spline_poles(int order) {
  switch (order) {
    case 1:
      return {};
    case 3:
      return {std::sqrt(3.0) - 2.0};
    case 5:
      return {std::sqrt(135.0 / 2.0 - std::sqrt(17745.0 / 4.0)) + std::sqrt(105.0 / 4.0) - 13.0 / 2.0,
              std::sqrt(135.0 / 2.0 + std::sqrt(17745.0 / 4.0)) - std::sqrt(105.0 / 4.0) - 13.0 / 2.0};
    default:
      throw ContractViolation("unsupported spline order " + std::to_string(order));
  }
}

inline double causal_init(const double* c, std::ptrdiff_t stride, int n, double z) {
  constexpr double kTolerance = 1e-15;
  const int horizon = static_cast<int>(std::ceil(std::log(kTolerance) / std::log(std::abs(z))));
  if (horizon < n) {
    double zn = z;
    double sum = c[0];
    for (int k = 1; k < horizon; ++k) {
      sum += zn * c[k * stride];
      zn *= z;
    }
    return sum;
  }
  // exact whole-sample mirror initialization
  double zn = z;
  const double iz = 1.0 / z;
  double z2n = std::pow(z, n - 1);
  double sum = c[0] + z2n * c[(n - 1) * stride];
  z2n *= z2n * iz;
  for (int k = 1; k < n - 1; ++k) {
    sum += (zn + z2n) * c[k * stride];
    zn *= z;
    z2n *= iz;
  }
  return sum / (1.0 - zn * zn);
}

/// In-place interpolation prefilter along one line of n samples.
inline void prefilter_line(double* c, std::ptrdiff_t stride, int n, const std::vector<double>& poles) {
  if (n < 2 || poles.empty()) return;
  double lambda = 1.0;
  for (double z : poles) lambda *= (1.0 - z) * (1.0 - 1.0 / z);
  for (int k = 0; k < n; ++k) c[k * stride] *= lambda;
  for (double z : poles) {
    c[0] = causal_init(c, stride, n, z);
    for (int k = 1; k < n; ++k) c[k * stride] += z * c[(k - 1) * stride];
    c[(n - 1) * stride] = (z / (z * z - 1.0)) * (z * c[(n - 2) * stride] + c[(n - 1) * stride]);
    for (int k = n - 2; k >= 0; --k) c[k * stride] = z * (c[(k + 1) * stride] - c[k * stride]);
  }
}

}  // namespace detail

inline void require_spline_order(int order) {
  if (order != 1 && order != 3 && order != 5) {
    throw ContractViolation("spline order must be 1, 3 or 5, got " + std::to_string(order));
  }
}

/// Several same-sized images interpolated at shared sample points. Each
/// channel is prefiltered once; evaluating a point computes the B-spline
/// weights a single time for all channels.
class SplineBundle {
 public:
  template <typename T>
  SplineBundle(const std::vector<const Grid<T>*>& channels, int order) : order_(order) {
    require_spline_order(order);
    if (channels.empty()) throw ContractViolation("spline bundle needs at least one channel");
    const auto poles = detail::spline_poles(order);
    for (const Grid<T>* img : channels) {
      if (!img->same_shape(*channels.front())) throw ContractViolation("spline bundle channels differ in size");
      Grid<double> c(img->width(), img->height());
      for (std::size_t i = 0; i < img->size(); ++i) c[i] = static_cast<double>((*img)[i]);
      if (!poles.empty()) {
        const int w = c.width();
        const int h = c.height();
        double* p = c.data();
        parallel_rows(0, h, [&](int y) { detail::prefilter_line(p + static_cast<std::ptrdiff_t>(y) * w, 1, w, poles); });
        parallel_rows(0, w, [&](int x) { detail::prefilter_line(p + x, w, h, poles); });
      }
      coeffs_.push_back(std::move(c));
    }
  }

  int order() const { return order_; }
  int width() const { return coeffs_.front().width(); }
  int height() const { return coeffs_.front().height(); }
  std::size_t channels() const { return coeffs_.size(); }

  /// True when (x, y) lies in [0, w-1] x [0, h-1] (with a 1e-6 px margin).
  bool inside(double x, double y) const {
    constexpr double kTol = 1e-6;
    return x >= -kTol && y >= -kTol && x <= width() - 1 + kTol && y <= height() - 1 + kTol;
  }

  /// Writes one interpolated value per channel into out.
  void evaluate(double x, double y, double* out) const {
    std::array<double, 6> wx{}, wy{};
    std::array<int, 6> ix{}, iy{};
    const int taps = order_ + 1;
    const int x0 = static_cast<int>(std::floor(x)) - (order_ - 1) / 2;
    const int y0 = static_cast<int>(std::floor(y)) - (order_ - 1) / 2;
    for (int k = 0; k < taps; ++k) {
      wx[k] = detail::bspline(order_, x - (x0 + k));
      wy[k] = detail::bspline(order_, y - (y0 + k));
      ix[k] = detail::mirror_index(x0 + k, width());
      iy[k] = detail::mirror_index(y0 + k, height());
    }
    for (std::size_t c = 0; c < coeffs_.size(); ++c) {
      double s = 0.0;
      for (int j = 0; j < taps; ++j) {
        if (wy[j] == 0.0) continue;
        const auto r = coeffs_[c].row(iy[j]);
        double t = 0.0;
        for (int k = 0; k < taps; ++k) t += wx[k] * r[ix[k]];
        s += wy[j] * t;
      }
      out[c] = s;
    }
  }

 private:
  int order_;
  std::vector<Grid<double>> coeffs_;
};

/// B-spline interpolant of one image with whole-sample mirror boundaries.
/// Order 1 is bilinear; orders 3 and 5 prefilter the samples so that
/// evaluation at integer positions reproduces the input.
class SplineImage {
 public:
  template <typename T>
  SplineImage(const Grid<T>& img, int order) : bundle_(std::vector<const Grid<T>*>{&img}, order) {}

  int order() const { return bundle_.order(); }
  int width() const { return bundle_.width(); }
  int height() const { return bundle_.height(); }
  bool inside(double x, double y) const { return bundle_.inside(x, y); }

  double operator()(double x, double y) const {
    double v;
    bundle_.evaluate(x, y, &v);
    return v;
  }

 private:
  SplineBundle bundle_;
};

}  // namespace ppx
