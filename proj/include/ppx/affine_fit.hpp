#pragma once

#include <Eigen/Dense>

#include "ppx/affine.hpp"
#include "ppx/grid.hpp"

namespace ppx {

/// Least-squares affine field B(x) = Bm x + b fitted to a displacement field
/// over all pixels. Coordinates are centered internally for conditioning.
template <typename T>
AffineField fit_affine_field(const BasicFlowField<T>& d) {
  const int w = d.width();
  const int h = d.height();
  const double cx = 0.5 * (w - 1);
  const double cy = 0.5 * (h - 1);
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atu = Eigen::Vector3d::Zero();
  Eigen::Vector3d atv = Eigen::Vector3d::Zero();
  // row-wise partial sums keep the accumulation order fixed
  for (int y = 0; y < h; ++y) {
    Eigen::Matrix3d rata = Eigen::Matrix3d::Zero();
    Eigen::Vector3d ratu = Eigen::Vector3d::Zero();
    Eigen::Vector3d ratv = Eigen::Vector3d::Zero();
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector3d phi(x - cx, y - cy, 1.0);
      rata.noalias() += phi * phi.transpose();
      ratu += phi * static_cast<double>(d.u(x, y));
      ratv += phi * static_cast<double>(d.v(x, y));
    }
    ata += rata;
    atu += ratu;
    atv += ratv;
  }
  // degenerate directions (single row or column) get a zero slope
  const Eigen::CompleteOrthogonalDecomposition<Eigen::Matrix3d> solver(ata);
  const Eigen::Vector3d pu = solver.solve(atu);
  const Eigen::Vector3d pv = solver.solve(atv);
  AffineField b;
  b.a11 = pu[0];
  b.a12 = pu[1];
  b.bx = pu[2] - pu[0] * cx - pu[1] * cy;
  b.a21 = pv[0];
  b.a22 = pv[1];
  b.by = pv[2] - pv[0] * cx - pv[1] * cy;
  return b;
}

/// d <- d - B over the whole grid.
template <typename T>
void subtract_affine_field(BasicFlowField<T>& d, const AffineField& b) {
  for (int y = 0; y < d.height(); ++y) {
    for (int x = 0; x < d.width(); ++x) {
      const Point p = b(x, y);
      d.u(x, y) = static_cast<T>(d.u(x, y) - p.x);
      d.v(x, y) = static_cast<T>(d.v(x, y) - p.y);
    }
  }
}

}  // namespace ppx
