#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "ppx/grid.hpp"

namespace ppx {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Planar affine map x -> M x + t, pixel coordinates (column, row).
struct AffineTransform {
  double m11 = 1.0, m12 = 0.0, m21 = 0.0, m22 = 1.0;
  double tx = 0.0, ty = 0.0;

  static AffineTransform identity() { return {}; }
  static AffineTransform translation(double tx, double ty) {
    return {1.0, 0.0, 0.0, 1.0, tx, ty};
  }

  Point operator()(double x, double y) const {
    return {m11 * x + m12 * y + tx, m21 * x + m22 * y + ty};
  }
  Point operator()(Point p) const { return (*this)(p.x, p.y); }

  double det() const { return m11 * m22 - m12 * m21; }

  /// max(|M - I| entries, |t|); the near-translation diagnostic.
  double distance_to_identity() const {
    return std::max({std::abs(m11 - 1.0), std::abs(m12), std::abs(m21),
                     std::abs(m22 - 1.0), std::abs(tx), std::abs(ty)});
  }

  AffineTransform inverse() const {
    const double d = det();
    if (!(std::abs(d) > 0.0)) throw ContractViolation("singular affine transform");
    AffineTransform r;
    r.m11 = m22 / d;
    r.m12 = -m12 / d;
    r.m21 = -m21 / d;
    r.m22 = m11 / d;
    r.tx = -(r.m11 * tx + r.m12 * ty);
    r.ty = -(r.m21 * tx + r.m22 * ty);
    return r;
  }

  /// Map expressed on a grid whose coordinates are `scale` times these ones.
  AffineTransform rescaled(double scale) const {
    AffineTransform r = *this;
    r.tx *= scale;
    r.ty *= scale;
    return r;
  }

  std::array<double, 6> coefficients() const { return {m11, m12, m21, m22, tx, ty}; }

  void validate() const {
    for (double c : coefficients()) {
      if (!std::isfinite(c)) throw ContractViolation("affine transform has non-finite coefficient");
    }
    if (!(det() > 0.0)) throw ContractViolation("affine transform must preserve orientation");
  }

  bool is_identity() const {
    return m11 == 1.0 && m12 == 0.0 && m21 == 0.0 && m22 == 1.0 && tx == 0.0 && ty == 0.0;
  }

  friend bool operator==(const AffineTransform&, const AffineTransform&) = default;
};

/// (a ∘ b)(x) = a(b(x)).
inline AffineTransform compose(const AffineTransform& a, const AffineTransform& b) {
  AffineTransform r;
  r.m11 = a.m11 * b.m11 + a.m12 * b.m21;
  r.m12 = a.m11 * b.m12 + a.m12 * b.m22;
  r.m21 = a.m21 * b.m11 + a.m22 * b.m21;
  r.m22 = a.m21 * b.m12 + a.m22 * b.m22;
  r.tx = a.m11 * b.tx + a.m12 * b.ty + a.tx;
  r.ty = a.m21 * b.tx + a.m22 * b.ty + a.ty;
  return r;
}

/// Affine displacement field x -> B x + b (zero field is all-zero).
struct AffineField {
  double a11 = 0.0, a12 = 0.0, a21 = 0.0, a22 = 0.0;
  double bx = 0.0, by = 0.0;

  Point operator()(double x, double y) const {
    return {a11 * x + a12 * y + bx, a21 * x + a22 * y + by};
  }
  std::array<double, 6> coefficients() const { return {a11, a12, a21, a22, bx, by}; }
  double max_abs() const {
    double m = 0.0;
    for (double c : coefficients()) m = std::max(m, std::abs(c));
    return m;
  }
};

/// A + s·B as maps: (M + sB) x + (t + s b).
inline AffineTransform add_scaled(const AffineTransform& a, const AffineField& b, double s) {
  return {a.m11 + s * b.a11, a.m12 + s * b.a12, a.m21 + s * b.a21,
          a.m22 + s * b.a22, a.tx + s * b.bx,   a.ty + s * b.by};
}

using AffinityMap = std::map<int, AffineTransform>;

}  // namespace ppx
