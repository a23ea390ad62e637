#pragma once

// Shared coarse-to-fine engine for the robust variational flow energies.
//
// The energy of a displacement field d against a reference v0 and a set of
// data terms (frame v_t, motion scale s_t, affine A_t) is
//
//   E(d) = sum_x 1/n(x) sum_{t valid at x} [ Ψ(v_t(p_t) - v0(x))
//                                           + γ Ψ(|G_t(x) - ∇v0(x)|) ]
//        + α sum_x Ψ(sqrt(|∇d_x|² + |∇d_y|²)),        p_t = A_t x + s_t d(x)
//
// with Ψ(z) = sqrt(z² + ε²), n(x) the number of terms whose pull stays inside
// the frame, and forward differences for ∇d in the smoothness term.
// G_t = Dp_tᵀ ∇v_t(p_t) is the gradient of the warped frame x ↦ v_t(p_t(x)),
// Dp_t = M_t + s_t ∇d (central differences), so that a frame related to v0
// exactly by the model also matches its gradient. A pairwise flow is the
// single term s = 1, A = identity.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ppx/affine.hpp"
#include "ppx/filter.hpp"
#include "ppx/flow_params.hpp"
#include "ppx/grid.hpp"
#include "ppx/parallel.hpp"
#include "ppx/robust.hpp"
#include "ppx/spline.hpp"

namespace ppx {

/// One data term of the energy: `frame` pulled at affine(x) + scale * d(x).
struct FlowTerm {
  const Image* frame = nullptr;
  const Mask* mask = nullptr;  // optional validity of frame samples
  double scale = 1.0;
  AffineTransform affine;
};

namespace detail {

enum Channel { kI = 0, kIx, kIy, kIxx, kIxy, kIyy, kChannels };

struct LevelTerm {
  SplineBundle bundle;
  std::optional<Grid<float>> mask;
  double scale;
  AffineTransform affine;
};

struct LevelProblem {
  int width = 0;
  int height = 0;
  Grid<double> ref, ref_x, ref_y;
  Mask ref_valid;
  std::vector<LevelTerm> terms;
};

// Warped samples: intensity, frame gradient at p, warped gradient G, and
// dG/dd = s·Dpᵀ·H (row-major).
enum WarpedChannel { kW = 0, kPx, kPy, kGx, kGy, kH11, kH12, kH21, kH22, kWarpedChannels };

struct WarpedTerm {
  std::vector<std::array<double, kWarpedChannels>> values;
  std::vector<std::uint8_t> valid;
};

inline bool mask_allows(const Grid<float>& m, double x, double y) {
  const int ix = std::clamp(static_cast<int>(std::lround(x)), 0, m.width() - 1);
  const int iy = std::clamp(static_cast<int>(std::lround(y)), 0, m.height() - 1);
  return m(ix, iy) > 0.999f;
}

inline Grid<float> mask_to_float(const Mask& m) {
  Grid<float> f(m.width(), m.height());
  for (std::size_t i = 0; i < m.size(); ++i) f[i] = m[i] ? 1.0f : 0.0f;
  return f;
}

/// Builds the spline bundle of an image and its first and second derivatives.
inline SplineBundle derivative_bundle(const Grid<float>& img, int order) {
  const Grid<double> d = grid_cast<double>(img);
  auto [gx, gy] = gradients(d);
  auto [gxx, gxy] = gradients(gx);
  auto [gyx, gyy] = gradients(gy);
  // symmetrize the mixed derivative
  for (std::size_t i = 0; i < gxy.size(); ++i) gxy[i] = 0.5 * (gxy[i] + gyx[i]);
  return SplineBundle(std::vector<const Grid<double>*>{&d, &gx, &gy, &gxx, &gxy, &gyy}, order);
}

/// Assembles one pyramid level. Affinities are given at full resolution and
/// rescaled by `level_scale`.
inline LevelProblem make_level(const Grid<float>& ref, const Grid<float>* ref_mask,
                               const AffineTransform& ref_affine,
                               const std::vector<const Grid<float>*>& frames,
                               const std::vector<const Grid<float>*>& masks,
                               const std::vector<FlowTerm>& terms, double level_scale, int order) {
  LevelProblem lp;
  lp.width = ref.width();
  lp.height = ref.height();
  lp.ref_valid = Mask(lp.width, lp.height, 1);
  if (ref_affine.is_identity()) {
    lp.ref = grid_cast<double>(ref);
    auto [gx, gy] = gradients(lp.ref);
    lp.ref_x = std::move(gx);
    lp.ref_y = std::move(gy);
    if (ref_mask) {
      for (std::size_t i = 0; i < ref_mask->size(); ++i) lp.ref_valid[i] = (*ref_mask)[i] > 0.999f;
    }
  } else {
    const Grid<double> d = grid_cast<double>(ref);
    auto [gx, gy] = gradients(d);
    const SplineBundle b(std::vector<const Grid<double>*>{&d, &gx, &gy}, order);
    const AffineTransform a = ref_affine.rescaled(level_scale);
    lp.ref = Grid<double>(lp.width, lp.height);
    lp.ref_x = Grid<double>(lp.width, lp.height);
    lp.ref_y = Grid<double>(lp.width, lp.height);
    parallel_rows(0, lp.height, [&](int y) {
      for (int x = 0; x < lp.width; ++x) {
        const Point p = a(x, y);
        double v[3] = {0.0, 0.0, 0.0};
        const bool ok = b.inside(p.x, p.y) && (!ref_mask || mask_allows(*ref_mask, p.x, p.y));
        if (ok) b.evaluate(p.x, p.y, v);
        lp.ref(x, y) = v[0];
        lp.ref_x(x, y) = v[1];
        lp.ref_y(x, y) = v[2];
        lp.ref_valid(x, y) = ok ? 1 : 0;
      }
    });
  }
  for (std::size_t t = 0; t < terms.size(); ++t) {
    std::optional<Grid<float>> m;
    if (masks[t]) m = *masks[t];
    lp.terms.push_back(LevelTerm{derivative_bundle(*frames[t], order), std::move(m), terms[t].scale,
                                 terms[t].affine.rescaled(level_scale)});
  }
  return lp;
}

/// Central-difference Jacobian (ux, uy, vx, vy) of d, one-sided at borders.
inline std::array<double, 4> flow_jacobian(const FlowFieldD& d, int x, int y) {
  const int w = d.width();
  const int h = d.height();
  const int xl = x > 0 ? x - 1 : x, xr = x + 1 < w ? x + 1 : x;
  const int yl = y > 0 ? y - 1 : y, yr = y + 1 < h ? y + 1 : y;
  const double sx = xr > xl ? 1.0 / (xr - xl) : 0.0;
  const double sy = yr > yl ? 1.0 / (yr - yl) : 0.0;
  return {(d.u(xr, y) - d.u(xl, y)) * sx, (d.u(x, yr) - d.u(x, yl)) * sy, (d.v(xr, y) - d.v(xl, y)) * sx,
          (d.v(x, yr) - d.v(x, yl)) * sy};
}

inline std::vector<WarpedTerm> warp_terms(const LevelProblem& lp, const FlowFieldD& d) {
  const int w = lp.width;
  const int h = lp.height;
  std::vector<WarpedTerm> out(lp.terms.size());
  for (std::size_t t = 0; t < lp.terms.size(); ++t) {
    const LevelTerm& term = lp.terms[t];
    WarpedTerm& wt = out[t];
    wt.values.assign(static_cast<std::size_t>(w) * h, {});
    wt.valid.assign(static_cast<std::size_t>(w) * h, 0);
    parallel_rows(0, h, [&](int y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (!lp.ref_valid[i]) continue;
        const Point a = term.affine(x, y);
        const double px = a.x + term.scale * d.u[i];
        const double py = a.y + term.scale * d.v[i];
        if (!term.bundle.inside(px, py)) continue;
        if (term.mask && !mask_allows(*term.mask, px, py)) continue;
        double v[kChannels];
        term.bundle.evaluate(px, py, v);
        const double k = term.scale;
        const auto [ux, uy, vx, vy] = flow_jacobian(d, x, y);
        const double j11 = term.affine.m11 + k * ux, j12 = term.affine.m12 + k * uy;
        const double j21 = term.affine.m21 + k * vx, j22 = term.affine.m22 + k * vy;
        auto& o = wt.values[i];
        o[kW] = v[kI];
        o[kPx] = v[kIx];
        o[kPy] = v[kIy];
        o[kGx] = j11 * v[kIx] + j21 * v[kIy];
        o[kGy] = j12 * v[kIx] + j22 * v[kIy];
        o[kH11] = k * (j11 * v[kIxx] + j21 * v[kIxy]);
        o[kH12] = k * (j11 * v[kIxy] + j21 * v[kIyy]);
        o[kH21] = k * (j12 * v[kIxx] + j22 * v[kIxy]);
        o[kH22] = k * (j12 * v[kIxy] + j22 * v[kIyy]);
        wt.valid[i] = 1;
      }
    });
  }
  return out;
}

inline double smoothness_sq(const FlowFieldD& d, int x, int y) {
  const int w = d.width();
  const int h = d.height();
  double ux = 0.0, uy = 0.0, vx = 0.0, vy = 0.0;
  if (x + 1 < w) {
    ux = d.u(x + 1, y) - d.u(x, y);
    vx = d.v(x + 1, y) - d.v(x, y);
  }
  if (y + 1 < h) {
    uy = d.u(x, y + 1) - d.u(x, y);
    vy = d.v(x, y + 1) - d.v(x, y);
  }
  return ux * ux + uy * uy + vx * vx + vy * vy;
}

inline double level_energy(const LevelProblem& lp, const FlowFieldD& d, const std::vector<WarpedTerm>& warped,
                           const FlowParams& p) {
  const int w = lp.width;
  const int h = lp.height;
  std::vector<double> rows(h);
  parallel_rows(0, h, [&](int y) {
    double row = 0.0;
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      double data = 0.0;
      int n = 0;
      for (const WarpedTerm& wt : warped) {
        if (!wt.valid[i]) continue;
        const auto& s = wt.values[i];
        const double gx = s[kGx] - lp.ref_x[i];
        const double gy = s[kGy] - lp.ref_y[i];
        data += robust_penalty(s[kW] - lp.ref[i], p.epsilon) + p.gamma * robust_penalty_sq(gx * gx + gy * gy, p.epsilon);
        ++n;
      }
      if (n > 0) row += data / n;
      row += p.alpha * robust_penalty_sq(smoothness_sq(d, x, y), p.epsilon);
    }
    rows[y] = row;
  });
  return deterministic_sum(rows);
}

struct Coefficients {
  std::vector<double> a11, a12, a22, b1, b2;
  explicit Coefficients(std::size_t n) : a11(n), a12(n), a22(n), b1(n), b2(n) {}
};

/// Lagged-weight (IRLS) coefficients of the data terms linearized around d,
/// evaluated at the current increment (du, dv).
inline void data_coefficients(const LevelProblem& lp, const std::vector<WarpedTerm>& warped,
                              const std::vector<double>& du, const std::vector<double>& dv, const FlowParams& p,
                              Coefficients& c) {
  const int w = lp.width;
  parallel_rows(0, lp.height, [&](int y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      double a11 = 0.0, a12 = 0.0, a22 = 0.0, b1 = 0.0, b2 = 0.0;
      int n = 0;
      for (std::size_t t = 0; t < warped.size(); ++t) {
        if (!warped[t].valid[i]) continue;
        const auto& s = warped[t].values[i];
        const double k = lp.terms[t].scale;
        const double ix = k * s[kPx];
        const double iy = k * s[kPy];
        const double it = s[kW] - lp.ref[i];
        const double r = it + ix * du[i] + iy * dv[i];
        const double wd = robust_weight_sq(r * r, p.epsilon);

        const double gx0 = s[kGx] - lp.ref_x[i];
        const double gy0 = s[kGy] - lp.ref_y[i];
        const double rx = gx0 + s[kH11] * du[i] + s[kH12] * dv[i];
        const double ry = gy0 + s[kH21] * du[i] + s[kH22] * dv[i];
        const double wg = p.gamma * robust_weight_sq(rx * rx + ry * ry, p.epsilon);

        a11 += wd * ix * ix + wg * (s[kH11] * s[kH11] + s[kH21] * s[kH21]);
        a12 += wd * ix * iy + wg * (s[kH11] * s[kH12] + s[kH21] * s[kH22]);
        a22 += wd * iy * iy + wg * (s[kH12] * s[kH12] + s[kH22] * s[kH22]);
        b1 += wd * ix * it + wg * (s[kH11] * gx0 + s[kH21] * gy0);
        b2 += wd * iy * it + wg * (s[kH12] * gx0 + s[kH22] * gy0);
        ++n;
      }
      const double inv = n > 0 ? 1.0 / n : 0.0;
      c.a11[i] = a11 * inv;
      c.a12[i] = a12 * inv;
      c.a22[i] = a22 * inv;
      c.b1[i] = b1 * inv;
      c.b2[i] = b2 * inv;
    }
  });
}

/// Red-black SOR sweeps on the linearized Euler-Lagrange system for (du, dv).
inline void sor_sweeps(const FlowFieldD& d, const Coefficients& c, const std::vector<double>& psi,
                       std::vector<double>& du, std::vector<double>& dv, const FlowParams& p) {
  const int w = d.width();
  const int h = d.height();
  const double alpha = p.alpha;
  const double omega = p.sor_omega;
  for (int it = 0; it < p.sor_iters; ++it) {
    for (int color = 0; color < 2; ++color) {
      parallel_rows(0, h, [&](int y) {
        for (int x = (y + color) % 2; x < w; x += 2) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          double sw = 0.0, su = 0.0, sv = 0.0;
          const auto edge = [&](std::size_t n, double wgt) {
            sw += wgt;
            su += wgt * (d.u[n] + du[n]);
            sv += wgt * (d.v[n] + dv[n]);
          };
          if (x + 1 < w) edge(i + 1, psi[i]);
          if (x > 0) edge(i - 1, psi[i - 1]);
          if (y + 1 < h) edge(i + w, psi[i]);
          if (y > 0) edge(i - w, psi[i - w]);

          const double tu = alpha * (su - sw * d.u[i]);
          const double nu = (-c.b1[i] - c.a12[i] * dv[i] + tu) / (c.a11[i] + alpha * sw);
          du[i] = (1.0 - omega) * du[i] + omega * nu;
          const double tv = alpha * (sv - sw * d.v[i]);
          const double nv = (-c.b2[i] - c.a12[i] * du[i] + tv) / (c.a22[i] + alpha * sw);
          dv[i] = (1.0 - omega) * dv[i] + omega * nv;
        }
      });
    }
  }
}

inline void check_finite(const std::vector<double>& v, int level, int outer) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw SolverDivergence("variational solver diverged at level " + std::to_string(level) + ", outer iteration " +
                             std::to_string(outer));
    }
  }
}

/// Warping iterations on one level. Each outer step linearizes around the
/// current flow, runs the lagged-weight/SOR loop, and accepts the increment
/// (halving it up to three times) only if the true energy does not grow.
inline void solve_level(const LevelProblem& lp, FlowFieldD& d, const FlowParams& p, int level,
                        SolverTrace* trace, bool finest) {
  const std::size_t n = static_cast<std::size_t>(lp.width) * lp.height;
  std::vector<WarpedTerm> warped = warp_terms(lp, d);
  double energy = level_energy(lp, d, warped, p);
  if (!std::isfinite(energy)) {
    throw SolverDivergence("non-finite energy at level " + std::to_string(level));
  }
  if (finest && trace) trace->finest_energies.push_back(energy);

  Coefficients coeffs(n);
  std::vector<double> psi(n);
  for (int outer = 0; outer < p.outer_iters; ++outer) {
    std::vector<double> du(n, 0.0), dv(n, 0.0);
    for (int inner = 0; inner < p.inner_iters; ++inner) {
      data_coefficients(lp, warped, du, dv, p, coeffs);
      parallel_rows(0, lp.height, [&](int y) {
        for (int x = 0; x < lp.width; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * lp.width + x;
          double ux = 0.0, uy = 0.0, vx = 0.0, vy = 0.0;
          if (x + 1 < lp.width) {
            ux = d.u[i + 1] + du[i + 1] - d.u[i] - du[i];
            vx = d.v[i + 1] + dv[i + 1] - d.v[i] - dv[i];
          }
          if (y + 1 < lp.height) {
            const std::size_t j = i + lp.width;
            uy = d.u[j] + du[j] - d.u[i] - du[i];
            vy = d.v[j] + dv[j] - d.v[i] - dv[i];
          }
          psi[i] = robust_weight_sq(ux * ux + uy * uy + vx * vx + vy * vy, p.epsilon);
        }
      });
      sor_sweeps(d, coeffs, psi, du, dv, p);
      check_finite(du, level, outer);
      check_finite(dv, level, outer);
    }

    bool accepted = false;
    double step = 1.0;
    for (int attempt = 0; attempt < 4; ++attempt, step *= 0.5) {
      FlowFieldD cand = d;
      for (std::size_t i = 0; i < n; ++i) {
        cand.u[i] += step * du[i];
        cand.v[i] += step * dv[i];
      }
      std::vector<WarpedTerm> cand_warped = warp_terms(lp, cand);
      const double e = level_energy(lp, cand, cand_warped, p);
      if (!std::isfinite(e)) {
        throw SolverDivergence("non-finite energy at level " + std::to_string(level) + ", outer iteration " +
                               std::to_string(outer));
      }
      if (e <= energy) {
        d = std::move(cand);
        warped = std::move(cand_warped);
        energy = e;
        accepted = true;
        break;
      }
      if (trace) ++trace->rejected_steps;
    }
    if (!accepted) break;
    if (trace) ++trace->accepted_steps;
    if (finest && trace) trace->finest_energies.push_back(energy);
  }
}

/// Full coarse-to-fine minimization.
inline FlowFieldD solve_variational(const Image& ref, const Mask* ref_mask, const AffineTransform& ref_affine,
                                    const std::vector<FlowTerm>& terms, const FlowParams& p,
                                    const FlowFieldD* init, SolverTrace* trace) {
  p.validate();
  const Pyramid ref_pyr = build_pyramid(ref, p.scale_factor, p.min_size);
  const std::size_t levels = ref_pyr.size();
  std::optional<BasicPyramid<float>> ref_mask_pyr;
  if (ref_mask) ref_mask_pyr = build_pyramid(mask_to_float(*ref_mask), p.scale_factor, p.min_size);
  std::vector<Pyramid> frame_pyr;
  std::vector<std::optional<BasicPyramid<float>>> mask_pyr;
  for (const FlowTerm& t : terms) {
    require_same_shape(ref, *t.frame, "variational flow frame");
    frame_pyr.push_back(build_pyramid(*t.frame, p.scale_factor, p.min_size));
    if (t.mask) {
      require_same_shape(ref, *t.mask, "variational flow mask");
      mask_pyr.emplace_back(build_pyramid(mask_to_float(*t.mask), p.scale_factor, p.min_size));
    } else {
      mask_pyr.emplace_back(std::nullopt);
    }
  }

  const Image& coarsest = ref_pyr.levels.back();
  FlowFieldD d(coarsest.width(), coarsest.height());
  if (init) {
    require_same_shape(ref, *init, "initial flow");
    d = downscale_flow(*init, coarsest.width(), coarsest.height(), ref_pyr.level_scale(levels - 1));
  }
  if (trace) trace->levels = static_cast<int>(levels);

  for (std::size_t l = levels; l-- > 0;) {
    const Image& lev = ref_pyr.levels[l];
    if (d.width() != lev.width() || d.height() != lev.height()) {
      d = upscale_flow(d, lev.width(), lev.height(), p.scale_factor);
    }
    std::vector<const Grid<float>*> frames, masks;
    for (std::size_t t = 0; t < terms.size(); ++t) {
      frames.push_back(&frame_pyr[t].levels[l]);
      masks.push_back(mask_pyr[t] ? &mask_pyr[t]->levels[l] : nullptr);
    }
    const LevelProblem lp = make_level(lev, ref_mask_pyr ? &ref_mask_pyr->levels[l] : nullptr, ref_affine, frames,
                                       masks, terms, ref_pyr.level_scale(l), p.interp_order);
    solve_level(lp, d, p, static_cast<int>(l), trace, l == 0);
  }
  return d;
}

/// Energy at full resolution.
inline double variational_energy(const Image& ref, const Mask* ref_mask, const AffineTransform& ref_affine,
                                 const std::vector<FlowTerm>& terms, const FlowParams& p, const FlowFieldD& d) {
  require_same_shape(ref, d, "energy flow");
  std::optional<Grid<float>> rm;
  if (ref_mask) rm = mask_to_float(*ref_mask);
  std::vector<Grid<float>> mask_store;
  mask_store.reserve(terms.size());
  std::vector<const Grid<float>*> frames, masks;
  for (const FlowTerm& t : terms) {
    require_same_shape(ref, *t.frame, "energy frame");
    frames.push_back(t.frame);
    if (t.mask) {
      mask_store.push_back(mask_to_float(*t.mask));
      masks.push_back(&mask_store.back());
    } else {
      masks.push_back(nullptr);
    }
  }
  const LevelProblem lp = make_level(ref, rm ? &*rm : nullptr, ref_affine, frames, masks, terms, 1.0, p.interp_order);
  return level_energy(lp, d, warp_terms(lp, d), p);
}

}  // namespace detail
}  // namespace ppx
