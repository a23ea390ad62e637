#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "ppx/grid.hpp"
#include "ppx/parallel.hpp"

namespace ppx {

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

/// Compressed sparse row matrix.
class CsrMatrix {
 public:
  CsrMatrix() = default;

  /// Duplicate (row, col) entries are summed.
  static CsrMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets) {
    std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    CsrMatrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.row_ptr_.assign(rows + 1, 0);
    for (std::size_t k = 0; k < triplets.size();) {
      const Triplet& t = triplets[k];
      if (t.row >= rows || t.col >= cols) throw ContractViolation("triplet outside matrix bounds");
      double v = 0.0;
      std::size_t j = k;
      while (j < triplets.size() && triplets[j].row == t.row && triplets[j].col == t.col) v += triplets[j++].value;
      m.col_idx_.push_back(t.col);
      m.values_.push_back(v);
      ++m.row_ptr_[t.row + 1];
      k = j;
    }
    for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
    return m;
  }

  /// Adopts raw CSR arrays; row_ptr has rows + 1 entries.
  static CsrMatrix from_csr(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
                            std::vector<std::size_t> col_idx, std::vector<double> values) {
    if (row_ptr.size() != rows + 1 || col_idx.size() != values.size() || row_ptr.back() != values.size()) {
      throw ContractViolation("inconsistent CSR arrays");
    }
    for (std::size_t c : col_idx) {
      if (c >= cols) throw ContractViolation("CSR column index out of range");
    }
    CsrMatrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.row_ptr_ = std::move(row_ptr);
    m.col_idx_ = std::move(col_idx);
    m.values_ = std::move(values);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nonzeros() const { return values_.size(); }

  double at(std::size_t r, std::size_t c) const {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      if (col_idx_[k] == c) return values_[k];
    }
    return 0.0;
  }

  std::vector<double> diagonal() const {
    std::vector<double> d(std::min(rows_, cols_), 0.0);
    for (std::size_t r = 0; r < d.size(); ++r) d[r] = at(r, r);
    return d;
  }

  /// y = A x. Each row is an independent ordered sum.
  void multiply(std::span<const double> x, std::span<double> y) const {
    if (x.size() != cols_ || y.size() != rows_) throw ContractViolation("sparse multiply: size mismatch");
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows_ > 4096)
#endif
    for (long r = 0; r < static_cast<long>(rows_); ++r) {
      double s = 0.0;
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s += values_[k] * x[col_idx_[k]];
      y[static_cast<std::size_t>(r)] = s;
    }
  }

  bool is_symmetric(double tol = 1e-12) const {
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
        const double a = values_[k];
        const double b = at(col_idx_[k], r);
        if (std::abs(a - b) > tol * std::max({1.0, std::abs(a), std::abs(b)})) return false;
      }
    }
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
};

struct CgResult {
  std::vector<double> solution;
  int iterations = 0;
  double relative_residual = 0.0;  // ||b - A x|| / ||b||
  bool converged = false;
};

/// Jacobi-preconditioned conjugate gradient for symmetric positive
/// (semi)definite systems, started from x = 0. Stops once
/// ||r|| / ||b|| <= tol or after max_iters; the returned solution is flagged
/// rather than discarded when the tolerance was not reached.
inline CgResult cg_solve(const CsrMatrix& a, std::span<const double> b, double tol, int max_iters) {
  if (!(tol > 0.0)) throw ContractViolation("cg tolerance must be positive");
  if (a.rows() != a.cols() || b.size() != a.rows()) throw ContractViolation("cg: system size mismatch");
  const std::size_t n = b.size();
  CgResult res;
  res.solution.assign(n, 0.0);

  const double bnorm = std::sqrt(deterministic_dot(b, b));
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }
  std::vector<double> inv_diag = a.diagonal();
  for (double& d : inv_diag) d = d > 0.0 ? 1.0 / d : 0.0;

  std::vector<double> r(b.begin(), b.end());
  std::vector<double> z(n), p(n), ap(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
  p = z;
  double rz = deterministic_dot(r, z);
  double rnorm = bnorm;

  for (int it = 1; it <= max_iters; ++it) {
    a.multiply(p, ap);
    const double pap = deterministic_dot(p, ap);
    if (!(pap > 0.0)) break;  // direction in the nullspace: nothing left to reduce
    const double step = rz / pap;
    for (std::size_t i = 0; i < n; ++i) {
      res.solution[i] += step * p[i];
      r[i] -= step * ap[i];
    }
    res.iterations = it;
    rnorm = std::sqrt(deterministic_dot(r, r));
    if (!std::isfinite(rnorm)) throw SolverDivergence("conjugate gradient produced a non-finite residual");
    if (rnorm / bnorm <= tol) break;
    for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
    const double rz_new = deterministic_dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  res.relative_residual = rnorm / bnorm;
  res.converged = res.relative_residual <= tol;
  return res;
}

}  // namespace ppx
