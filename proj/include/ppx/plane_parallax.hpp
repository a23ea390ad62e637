#pragma once

// Plane+parallax factorization of pairwise flows.
//
// Every pairwise flow w_i (v0(x) = v_i(x + w_i(x))) is modeled as
//
//   x + w_i(x) = A_i(x) + i · J_i d(x)
//
// with one affine map per frame and a single disparity field d shared by all
// frames, scaled by the signed frame index. J_i is the identity unless rough
// affinities are supplied. The system is linear in (A_i, d); it is sampled on
// a regular grid of nodes, assembled in normal-equation form and solved with
// conjugate gradient. The solution is determined up to an affine field
// (d -> d + B, A_i -> A_i - i·J_i B), which is removed from d afterwards.

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ppx/affine.hpp"
#include "ppx/affine_fit.hpp"
#include "ppx/burst.hpp"
#include "ppx/filter.hpp"
#include "ppx/grid.hpp"
#include "ppx/sparse.hpp"
#include "ppx/warp.hpp"

namespace ppx {

struct FactorizationProblem {
  std::map<int, FlowField> flows;
  int subsample_step = 4;
  bool fix_reference = true;
  /// Optional per-frame estimates whose linear part is used as J_i.
  AffinityMap rough_affinities;

  /// Frames that carry affine unknowns, in increasing index order.
  std::vector<int> unknown_frames() const {
    std::vector<int> out;
    for (const auto& [i, f] : flows) {
      if (i == 0 && fix_reference) continue;
      out.push_back(i);
    }
    return out;
  }

  void validate() const {
    std::size_t non_ref = 0;
    for (const auto& [i, f] : flows) non_ref += i != 0;
    if (non_ref < 2) throw ContractViolation("factorization needs at least 2 non-reference frames");
    if (subsample_step < 1) throw ContractViolation("subsample_step must be at least 1");
    const FlowField& first = flows.begin()->second;
    for (const auto& [i, f] : flows) {
      require_same_shape(first, f, ("factorization flow " + std::to_string(i)).c_str());
      if (!all_finite(f)) throw ContractViolation("flow " + std::to_string(i) + " has non-finite values");
    }
  }
};

/// Normal equations of the sampled factorization.
/// Unknowns: for each frame k, [m11 m12 tx m21 m22 ty] at 6k; then
/// [dx dy] for each grid node at node_offset() + 2n.
struct LinearSystem {
  CsrMatrix normal;
  std::vector<double> rhs;
  std::size_t equations = 0;
  std::size_t unknowns = 0;
  std::vector<int> frames;
  int width = 0, height = 0;
  int step = 1;
  int grid_width = 0, grid_height = 0;

  std::size_t node_offset() const { return 6 * frames.size(); }
  std::size_t nodes() const { return static_cast<std::size_t>(grid_width) * grid_height; }
};

struct FactorizationResult {
  AffinityMap affinities;
  FlowField disparity;  // per unit frame index, gauge-fixed
  double residual_rms = 0.0;
  AffineField gauge;    // affine component removed from d
  int cg_iterations = 0;
  double cg_relative_residual = 0.0;
  bool converged = false;
};

namespace detail {

using Mat2 = std::array<std::array<double, 2>, 2>;

inline Mat2 jacobian_for(const FactorizationProblem& pb, int index) {
  const auto it = pb.rough_affinities.find(index);
  if (it == pb.rough_affinities.end()) return {{{1.0, 0.0}, {0.0, 1.0}}};
  return {{{it->second.m11, it->second.m12}, {it->second.m21, it->second.m22}}};
}

}  // namespace detail

inline LinearSystem build_system(const FactorizationProblem& pb) {
  pb.validate();
  LinearSystem sys;
  sys.frames = pb.unknown_frames();
  const FlowField& any = pb.flows.begin()->second;
  sys.width = any.width();
  sys.height = any.height();
  sys.step = pb.subsample_step;
  sys.grid_width = (sys.width + sys.step - 1) / sys.step;
  sys.grid_height = (sys.height + sys.step - 1) / sys.step;

  const std::size_t nf = sys.frames.size();
  const std::size_t nn = sys.nodes();
  const std::size_t n0 = sys.node_offset();
  sys.unknowns = 6 * nf + 2 * nn;
  sys.equations = 2 * nn * nf;
  if (sys.equations < sys.unknowns) {
    throw UnderdeterminedSystem("factorization is underdetermined: " + std::to_string(sys.equations) +
                                " equations for " + std::to_string(sys.unknowns) + " unknowns");
  }

  std::vector<const FlowField*> flows;
  std::vector<double> idx;
  std::vector<detail::Mat2> jac;
  for (int i : sys.frames) {
    flows.push_back(&pb.flows.at(i));
    idx.push_back(static_cast<double>(i));
    jac.push_back(detail::jacobian_for(pb, i));
  }

  const auto node_pos = [&](std::size_t n) {
    return std::array<int, 2>{static_cast<int>(n % sys.grid_width) * sys.step,
                              static_cast<int>(n / sys.grid_width) * sys.step};
  };
  // observed target f_i(x) = x + w_i(x), component q
  const auto target = [&](std::size_t k, std::size_t n, int q) {
    const auto [x, y] = node_pos(n);
    return q == 0 ? x + static_cast<double>(flows[k]->u(x, y)) : y + static_cast<double>(flows[k]->v(x, y));
  };

  // frame Gram block, shared by both components
  std::array<std::array<double, 3>, 3> gram{};
  for (std::size_t n = 0; n < nn; ++n) {
    const auto [x, y] = node_pos(n);
    const double phi[3] = {static_cast<double>(x), static_cast<double>(y), 1.0};
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) gram[a][b] += phi[a] * phi[b];
  }

  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  cols.reserve(12 * nf * nn + 4 * nn + 18 * nf);
  vals.reserve(cols.capacity());
  sys.rhs.assign(sys.unknowns, 0.0);

  // frame parameter rows
  for (std::size_t k = 0; k < nf; ++k) {
    for (int q = 0; q < 2; ++q) {
      for (int j = 0; j < 3; ++j) {
        const std::size_t row = 6 * k + 3 * q + j;
        for (int jj = 0; jj < 3; ++jj) {
          cols.push_back(6 * k + 3 * q + jj);
          vals.push_back(gram[j][jj]);
        }
        double rhs = 0.0;
        for (std::size_t n = 0; n < nn; ++n) {
          const auto [x, y] = node_pos(n);
          const double phi = j == 0 ? x : (j == 1 ? y : 1.0);
          for (int m = 0; m < 2; ++m) {
            cols.push_back(n0 + 2 * n + m);
            vals.push_back(phi * idx[k] * jac[k][q][m]);
          }
          rhs += phi * target(k, n, q);
        }
        sys.rhs[row] = rhs;
        row_ptr.push_back(cols.size());
      }
    }
  }
  // node rows
  for (std::size_t n = 0; n < nn; ++n) {
    const auto [x, y] = node_pos(n);
    const double phi[3] = {static_cast<double>(x), static_cast<double>(y), 1.0};
    for (int m = 0; m < 2; ++m) {
      double rhs = 0.0;
      for (std::size_t k = 0; k < nf; ++k) {
        for (int q = 0; q < 2; ++q) {
          for (int j = 0; j < 3; ++j) {
            cols.push_back(6 * k + 3 * q + j);
            vals.push_back(phi[j] * idx[k] * jac[k][q][m]);
          }
          rhs += idx[k] * jac[k][q][m] * target(k, n, q);
        }
      }
      for (int mm = 0; mm < 2; ++mm) {
        double s = 0.0;
        for (std::size_t k = 0; k < nf; ++k) {
          s += idx[k] * idx[k] * (jac[k][0][m] * jac[k][0][mm] + jac[k][1][m] * jac[k][1][mm]);
        }
        cols.push_back(n0 + 2 * n + mm);
        vals.push_back(s);
      }
      sys.rhs[n0 + 2 * n + m] = rhs;
      row_ptr.push_back(cols.size());
    }
  }
  sys.normal = CsrMatrix::from_csr(sys.unknowns, sys.unknowns, std::move(row_ptr), std::move(cols), std::move(vals));
  return sys;
}

namespace detail {

/// Bilinear upsampling of node values to every pixel; pixels past the last
/// node take the border node value.
inline FlowFieldD upsample_nodes(const LinearSystem& sys, std::span<const double> solution) {
  const std::size_t n0 = sys.node_offset();
  Grid<double> gu(sys.grid_width, sys.grid_height), gv(sys.grid_width, sys.grid_height);
  for (std::size_t n = 0; n < sys.nodes(); ++n) {
    gu[n] = solution[n0 + 2 * n];
    gv[n] = solution[n0 + 2 * n + 1];
  }
  FlowFieldD d(sys.width, sys.height);
  const double s = sys.step;
  for (int y = 0; y < sys.height; ++y) {
    for (int x = 0; x < sys.width; ++x) {
      d.u(x, y) = sample_bilinear(gu, x / s, y / s);
      d.v(x, y) = sample_bilinear(gv, x / s, y / s);
    }
  }
  return d;
}

}  // namespace detail

/// Solves the factorization and fixes the gauge so that d has no affine
/// component.
inline FactorizationResult solve_plane_parallax(const FactorizationProblem& pb, double tol = 1e-10,
                                                int max_iters = 5000) {
  const LinearSystem sys = build_system(pb);
  const CgResult cg = cg_solve(sys.normal, sys.rhs, tol, max_iters);
  const std::vector<double>& s = cg.solution;

  FactorizationResult res;
  res.cg_iterations = cg.iterations;
  res.cg_relative_residual = cg.relative_residual;
  res.converged = cg.converged;

  std::map<int, detail::Mat2> jac;
  for (std::size_t k = 0; k < sys.frames.size(); ++k) {
    const int i = sys.frames[k];
    jac[i] = detail::jacobian_for(pb, i);
    res.affinities[i] = AffineTransform{s[6 * k], s[6 * k + 1], s[6 * k + 3], s[6 * k + 4], s[6 * k + 2], s[6 * k + 5]};
  }
  if (!res.affinities.count(0)) res.affinities[0] = AffineTransform::identity();

  // residual over the equations that entered the system
  {
    const std::size_t n0 = sys.node_offset();
    std::vector<double> rows(sys.frames.size());
    for (std::size_t k = 0; k < sys.frames.size(); ++k) {
      const int i = sys.frames[k];
      const FlowField& f = pb.flows.at(i);
      const AffineTransform& a = res.affinities[i];
      const detail::Mat2& j = jac[i];
      double acc = 0.0;
      for (std::size_t n = 0; n < sys.nodes(); ++n) {
        const int x = static_cast<int>(n % sys.grid_width) * sys.step;
        const int y = static_cast<int>(n / sys.grid_width) * sys.step;
        const double dx = s[n0 + 2 * n];
        const double dy = s[n0 + 2 * n + 1];
        const Point p = a(x, y);
        const double ex = p.x + i * (j[0][0] * dx + j[0][1] * dy) - (x + static_cast<double>(f.u(x, y)));
        const double ey = p.y + i * (j[1][0] * dx + j[1][1] * dy) - (y + static_cast<double>(f.v(x, y)));
        acc += ex * ex + ey * ey;
      }
      rows[k] = acc;
    }
    res.residual_rms = std::sqrt(deterministic_sum(rows) / static_cast<double>(sys.equations));
  }

  FlowFieldD d = detail::upsample_nodes(sys, s);
  res.gauge = fit_affine_field(d);
  subtract_affine_field(d, res.gauge);
  const AffineField& b = res.gauge;
  for (auto& [i, a] : res.affinities) {
    if (i == 0) continue;
    const detail::Mat2& j = jac.count(i) ? jac[i] : detail::Mat2{{{1.0, 0.0}, {0.0, 1.0}}};
    // A_i + i · J_i B
    AffineField jb;
    jb.a11 = j[0][0] * b.a11 + j[0][1] * b.a21;
    jb.a12 = j[0][0] * b.a12 + j[0][1] * b.a22;
    jb.a21 = j[1][0] * b.a11 + j[1][1] * b.a21;
    jb.a22 = j[1][0] * b.a12 + j[1][1] * b.a22;
    jb.bx = j[0][0] * b.bx + j[0][1] * b.by;
    jb.by = j[1][0] * b.bx + j[1][1] * b.by;
    a = add_scaled(a, jb, static_cast<double>(i));
  }
  res.disparity = flow_cast<float>(d);
  return res;
}

/// Disparity per frame step implied by a single pairwise flow under
/// x + flow(x) = A_i(x + i·d(x)).
template <typename T>
FlowFieldD baseline_normalized_flow(const BasicFlowField<T>& flow, const AffineTransform& a, int i) {
  if (i == 0) throw ContractViolation("the reference has no baseline");
  const AffineTransform inv = a.inverse();
  FlowFieldD d(flow.width(), flow.height());
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      const Point p = inv(x + static_cast<double>(flow.u(x, y)), y + static_cast<double>(flow.v(x, y)));
      d.u(x, y) = (p.x - x) / i;
      d.v(x, y) = (p.y - y) / i;
    }
  }
  return d;
}

/// Resamples every frame onto the common plane: frame_i(A_i x).
inline Burst stabilize(const Burst& frames, const AffinityMap& affinities, int order = 5) {
  frames.validate();
  Burst out;
  for (const auto& [i, img] : frames.frames) {
    const auto it = affinities.find(i);
    if (it == affinities.end() && i != 0) {
      throw ContractViolation("no affinity for frame " + std::to_string(i));
    }
    const AffineTransform a = it == affinities.end() ? AffineTransform::identity() : it->second;
    WarpResult r = apply_affine(img, a, order);
    if (const Mask* m = frames.mask(i)) {
      for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
          if (!r.mask(x, y)) continue;
          const Point p = a(x, y);
          const int sx = std::clamp(static_cast<int>(std::lround(p.x)), 0, img.width() - 1);
          const int sy = std::clamp(static_cast<int>(std::lround(p.y)), 0, img.height() - 1);
          if (!(*m)(sx, sy)) {
            r.mask(x, y) = 0;
            r.image(x, y) = 0.0f;
          }
        }
      }
    }
    out.frames.emplace(i, std::move(r.image));
    out.masks.emplace(i, std::move(r.mask));
  }
  return out;
}

}  // namespace ppx
