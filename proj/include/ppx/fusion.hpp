#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppx/affine.hpp"
#include "ppx/burst.hpp"
#include "ppx/filter.hpp"
#include "ppx/grid.hpp"
#include "ppx/parallel.hpp"
#include "ppx/spline.hpp"
#include "ppx/warp.hpp"

namespace ppx {

/// Frames resampled into the (possibly zoomed) reference grid.
struct AlignedStack {
  std::vector<int> indices;
  std::vector<Image> layers;
  std::vector<Mask> masks;
  int zoom = 1;

  int width() const { return layers.empty() ? 0 : layers.front().width(); }
  int height() const { return layers.empty() ? 0 : layers.front().height(); }
};

namespace detail {

inline const AffineTransform& affinity_or_identity(const AffinityMap& affinities, int i) {
  static const AffineTransform kIdentity;
  const auto it = affinities.find(i);
  if (it != affinities.end()) return it->second;
  if (i == 0) return kIdentity;
  throw ContractViolation("no affinity for frame " + std::to_string(i));
}

inline bool frame_mask_allows(const Mask* m, double x, double y) {
  if (!m) return true;
  const int ix = std::clamp(static_cast<int>(std::lround(x)), 0, m->width() - 1);
  const int iy = std::clamp(static_cast<int>(std::lround(y)), 0, m->height() - 1);
  return (*m)(ix, iy) != 0;
}

}  // namespace detail

/// Resamples each frame at A_i x + i·d(x) on the zoom-scaled reference grid
/// (high-resolution pixel X sits at reference coordinate X / zoom).
template <typename T>
AlignedStack align_stack(const Burst& frames, const AffinityMap& affinities, const BasicFlowField<T>& d, int zoom,
                         int order = 5) {
  frames.validate();
  if (zoom < 1) throw ContractViolation("zoom must be at least 1");
  require_same_shape(frames.reference(), d, "align_stack disparity");
  require_spline_order(order);
  AlignedStack stack;
  stack.zoom = zoom;
  const int w = frames.width() * zoom;
  const int h = frames.height() * zoom;
  for (const auto& [i, img] : frames.frames) {
    const AffineTransform& a = detail::affinity_or_identity(affinities, i);
    const SplineImage spline(img, order);
    const Mask* fm = frames.mask(i);
    Image layer(w, h);
    Mask mask(w, h);
    parallel_rows(0, h, [&](int y) {
      for (int x = 0; x < w; ++x) {
        const double rx = static_cast<double>(x) / zoom;
        const double ry = static_cast<double>(y) / zoom;
        const Point p = a(rx, ry);
        const double px = p.x + i * sample_bilinear(d.u, rx, ry);
        const double py = p.y + i * sample_bilinear(d.v, rx, ry);
        if (spline.inside(px, py) && detail::frame_mask_allows(fm, px, py)) {
          layer(x, y) = static_cast<float>(spline(px, py));
          mask(x, y) = 1;
        } else {
          layer(x, y) = 0.0f;
          mask(x, y) = 0;
        }
      }
    });
    stack.indices.push_back(i);
    stack.layers.push_back(std::move(layer));
    stack.masks.push_back(std::move(mask));
  }
  return stack;
}

struct TemporalStd {
  Image std_map;
  double mean = 0.0;            // over fully valid pixels
  std::size_t full_pixels = 0;  // number of fully valid pixels
};

/// Per-pixel population standard deviation over the valid layers. Pixels
/// with fewer than two valid layers get 0.
inline TemporalStd temporal_std(const AlignedStack& stack, const Mask* region = nullptr) {
  if (stack.layers.size() < 2) throw MetricError("temporal_std needs at least two layers");
  const int w = stack.width();
  const int h = stack.height();
  if (region) require_same_shape(stack.layers.front(), *region, "temporal_std region");
  TemporalStd out{Image(w, h), 0.0, 0};
  std::vector<double> row_sum(h, 0.0);
  std::vector<std::size_t> row_count(h, 0);
  const std::size_t n = stack.layers.size();
  parallel_rows(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0, sq = 0.0;
      std::size_t valid = 0;
      for (std::size_t l = 0; l < n; ++l) {
        if (!stack.masks[l](x, y)) continue;
        const double v = stack.layers[l](x, y);
        sum += v;
        ++valid;
      }
      double s = 0.0;
      if (valid >= 2) {
        const double mean = sum / static_cast<double>(valid);
        for (std::size_t l = 0; l < n; ++l) {
          if (!stack.masks[l](x, y)) continue;
          const double dv = stack.layers[l](x, y) - mean;
          sq += dv * dv;
        }
        s = std::sqrt(sq / static_cast<double>(valid));
      }
      out.std_map(x, y) = static_cast<float>(s);
      if (valid == n && (!region || (*region)(x, y))) {
        row_sum[y] += s;
        ++row_count[y];
      }
    }
  });
  for (std::size_t c : row_count) out.full_pixels += c;
  if (out.full_pixels == 0) throw MetricError("temporal_std: no fully valid pixel");
  out.mean = deterministic_sum(row_sum) / static_cast<double>(out.full_pixels);
  return out;
}

/// Inverse of x -> A(x) + s·d(x) at `target`, by fixed-point iteration.
template <typename T>
Point invert_frame_map(const AffineTransform& a_inv, double s, const BasicFlowField<T>& d, Point target) {
  Point x = a_inv(target);
  for (int it = 0; it < 20; ++it) {
    const double du = sample_bilinear(d.u, x.x, x.y);
    const double dv = sample_bilinear(d.v, x.x, x.y);
    const Point nx = a_inv(target.x - s * du, target.y - s * dv);
    const double delta = std::abs(nx.x - x.x) + std::abs(nx.y - x.y);
    x = nx;
    if (delta < 1e-10) break;
  }
  return x;
}

/// Shift-and-add super-resolution. Every low-resolution sample of frame i is
/// mapped to the reference grid through the inverse of A_i x + i·d(x) and
/// splatted onto the zoom grid with a Gaussian of std `sigma` (high-res
/// pixels). Pixels with total weight below 1e-3 fall back to an order-5
/// spline upsampling of the reference frame.
template <typename T>
Image super_resolve(const Burst& frames, const AffinityMap& affinities, const BasicFlowField<T>& d, int zoom,
                    double sigma = 0.5) {
  frames.validate();
  if (zoom != 2 && zoom != 3) throw ContractViolation("super_resolve supports zoom 2 or 3");
  if (!(sigma > 0.0)) throw ContractViolation("splat sigma must be positive");
  require_same_shape(frames.reference(), d, "super_resolve disparity");
  const int lw = frames.width();
  const int lh = frames.height();
  const int w = lw * zoom;
  const int h = lh * zoom;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  const double inv2s2 = 0.5 / (sigma * sigma);

  Grid<double> num(w, h, 0.0), den(w, h, 0.0);
  for (const auto& [i, img] : frames.frames) {
    const AffineTransform a_inv = detail::affinity_or_identity(affinities, i).inverse();
    const Mask* fm = frames.mask(i);
    // private accumulation per frame, merged in index order
    Grid<double> fnum(w, h, 0.0), fden(w, h, 0.0);
    std::vector<Point> pos(static_cast<std::size_t>(lw) * lh);
    parallel_rows(0, lh, [&](int y) {
      for (int x = 0; x < lw; ++x) {
        pos[static_cast<std::size_t>(y) * lw + x] = invert_frame_map(a_inv, static_cast<double>(i), d, {double(x), double(y)});
      }
    });
    // splat row bands serially in a fixed order so overlapping writes are ordered
    for (int y = 0; y < lh; ++y) {
      for (int x = 0; x < lw; ++x) {
        if (fm && !(*fm)(x, y)) continue;
        const Point p = pos[static_cast<std::size_t>(y) * lw + x];
        const double hx = p.x * zoom;
        const double hy = p.y * zoom;
        const int cx = static_cast<int>(std::lround(hx));
        const int cy = static_cast<int>(std::lround(hy));
        const double v = img(x, y);
        for (int yy = cy - radius; yy <= cy + radius; ++yy) {
          if (yy < 0 || yy >= h) continue;
          for (int xx = cx - radius; xx <= cx + radius; ++xx) {
            if (xx < 0 || xx >= w) continue;
            const double r2 = (xx - hx) * (xx - hx) + (yy - hy) * (yy - hy);
            const double wt = std::exp(-r2 * inv2s2);
            fnum(xx, yy) += wt * v;
            fden(xx, yy) += wt;
          }
        }
      }
    }
    for (std::size_t k = 0; k < num.size(); ++k) {
      num[k] += fnum[k];
      den[k] += fden[k];
    }
  }

  const SplineImage ref(frames.reference(), 5);
  Image out(w, h);
  parallel_rows(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      if (den(x, y) >= 1e-3) {
        out(x, y) = static_cast<float>(num(x, y) / den(x, y));
      } else {
        const double rx = std::min(static_cast<double>(x) / zoom, lw - 1.0);
        const double ry = std::min(static_cast<double>(y) / zoom, lh - 1.0);
        out(x, y) = static_cast<float>(ref(rx, ry));
      }
    }
  });
  return out;
}

/// Order-5 spline upsampling of one image onto the zoom grid.
inline Image upsample(const Image& img, int zoom, int order = 5) {
  if (zoom < 1) throw ContractViolation("zoom must be at least 1");
  const SplineImage s(img, order);
  Image out(img.width() * zoom, img.height() * zoom);
  parallel_rows(0, out.height(), [&](int y) {
    for (int x = 0; x < out.width(); ++x) {
      const double rx = std::min(static_cast<double>(x) / zoom, img.width() - 1.0);
      const double ry = std::min(static_cast<double>(y) / zoom, img.height() - 1.0);
      out(x, y) = static_cast<float>(s(rx, ry));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Surface model

struct SurfaceModel {
  Grid<double> heights;
  Point direction{1.0, 0.0};
  std::optional<double> scale;
  bool degenerate = false;  // d was identically zero
};

/// Heights along the parallax direction: scale · <d(x), direction>.
/// Without a direction the dominant axis of d (principal eigenvector of its
/// second-moment matrix) is used, signed so that the median height is >= 0.
/// A supplied direction is used as given.
template <typename T>
SurfaceModel disparity_to_dsm(const BasicFlowField<T>& d, std::optional<Point> direction = std::nullopt,
                              std::optional<double> scale = std::nullopt) {
  if (!all_finite(d)) throw ContractViolation("disparity_to_dsm: non-finite disparity");
  SurfaceModel m;
  m.scale = scale;
  const double k = scale.value_or(1.0);
  bool all_zero = true;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.u[i] != 0 || d.v[i] != 0) {
      all_zero = false;
      break;
    }
  }
  if (all_zero) {
    m.degenerate = true;
    m.heights = Grid<double>(d.width(), d.height(), 0.0);
    if (direction) {
      const double n = std::hypot(direction->x, direction->y);
      if (!(n > 0.0)) throw ContractViolation("direction must be non-zero");
      m.direction = {direction->x / n, direction->y / n};
    }
    return m;
  }

  bool estimated = false;
  if (direction) {
    const double n = std::hypot(direction->x, direction->y);
    if (!(n > 0.0)) throw ContractViolation("direction must be non-zero");
    m.direction = {direction->x / n, direction->y / n};
  } else {
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double u = d.u[i], v = d.v[i];
      sxx += u * u;
      sxy += u * v;
      syy += v * v;
    }
    Eigen::Matrix2d c;
    c << sxx, sxy, sxy, syy;
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(c);
    const Eigen::Vector2d e = es.eigenvectors().col(1);
    m.direction = {e[0], e[1]};
    estimated = true;
  }
  m.heights = Grid<double>(d.width(), d.height());
  for (std::size_t i = 0; i < d.size(); ++i) {
    m.heights[i] = k * (d.u[i] * m.direction.x + d.v[i] * m.direction.y);
  }
  if (estimated) {
    std::vector<double> sorted(m.heights.samples().begin(), m.heights.samples().end());
    const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    if (*mid < 0.0) {
      for (double& hgt : m.heights.samples()) hgt = -hgt;
      m.direction = {-m.direction.x, -m.direction.y};
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Removes the least-squares plane a x + b y + c.
inline Grid<double> remove_plane(const Grid<double>& g, const Mask* mask = nullptr) {
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  const double cx = 0.5 * (g.width() - 1), cy = 0.5 * (g.height() - 1);
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) {
      if (mask && !(*mask)(x, y)) continue;
      const Eigen::Vector3d phi(x - cx, y - cy, 1.0);
      ata += phi * phi.transpose();
      atb += phi * g(x, y);
    }
  const Eigen::Vector3d c = ata.completeOrthogonalDecomposition().solve(atb);
  Grid<double> out(g.width(), g.height());
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) out(x, y) = g(x, y) - (c[0] * (x - cx) + c[1] * (y - cy) + c[2]);
  return out;
}

/// Pearson correlation over the masked pixels.
template <typename A, typename B>
double pearson(const Grid<A>& a, const Grid<B>& b, const Mask* mask = nullptr) {
  require_same_shape(a, b, "pearson");
  double sa = 0, sb = 0, n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    sa += a[i];
    sb += b[i];
    n += 1;
  }
  if (n < 2) throw MetricError("pearson: fewer than two samples");
  const double ma = sa / n, mb = sb / n;
  double cab = 0, caa = 0, cbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    const double da = a[i] - ma, db = b[i] - mb;
    cab += da * db;
    caa += da * da;
    cbb += db * db;
  }
  if (caa == 0 || cbb == 0) return 0.0;
  return cab / std::sqrt(caa * cbb);
}

/// Normalized cross-correlation (zero-mean) over the masked pixels.
template <typename A, typename B>
double normalized_cross_correlation(const Grid<A>& a, const Grid<B>& b, const Mask* mask = nullptr) {
  return pearson(a, b, mask);
}

/// Sum over pixels of the forward-difference gradient norm.
template <typename T>
double total_variation(const Grid<T>& g) {
  std::vector<double> rows(g.height(), 0.0);
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      const double gx = x + 1 < g.width() ? static_cast<double>(g(x + 1, y)) - g(x, y) : 0.0;
      const double gy = y + 1 < g.height() ? static_cast<double>(g(x, y + 1)) - g(x, y) : 0.0;
      rows[y] += std::hypot(gx, gy);
    }
  }
  return deterministic_sum(rows);
}

template <typename T>
double total_variation(const BasicFlowField<T>& f) {
  std::vector<double> rows(f.height(), 0.0);
  for (int y = 0; y < f.height(); ++y) {
    for (int x = 0; x < f.width(); ++x) {
      double s = 0.0;
      for (const Grid<T>* c : {&f.u, &f.v}) {
        const double gx = x + 1 < f.width() ? static_cast<double>((*c)(x + 1, y)) - (*c)(x, y) : 0.0;
        const double gy = y + 1 < f.height() ? static_cast<double>((*c)(x, y + 1)) - (*c)(x, y) : 0.0;
        s += gx * gx + gy * gy;
      }
      rows[y] += std::sqrt(s);
    }
  }
  return deterministic_sum(rows);
}

/// Mean squared gradient magnitude over the masked pixels.
inline double gradient_energy(const Image& img, const Mask* mask = nullptr) {
  const auto [gx, gy] = gradients(img);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    s += static_cast<double>(gx[i]) * gx[i] + static_cast<double>(gy[i]) * gy[i];
    ++n;
  }
  if (n == 0) throw MetricError("gradient_energy: empty mask");
  return s / static_cast<double>(n);
}

}  // namespace ppx
