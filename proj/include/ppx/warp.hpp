#pragma once

#include <utility>

#include "ppx/affine.hpp"
#include "ppx/grid.hpp"
#include "ppx/parallel.hpp"
#include "ppx/spline.hpp"

namespace ppx {

struct WarpResult {
  Image image;
  Mask mask;
};

/// Samples `spline` at map(x, y) for every pixel of a width x height grid.
/// Pulls that land outside the source domain are masked and set to 0.
template <typename Map>
WarpResult resample(const SplineImage& spline, int width, int height, Map&& map) {
  WarpResult r{Image(width, height), Mask(width, height)};
  parallel_rows(0, height, [&](int y) {
    for (int x = 0; x < width; ++x) {
      const Point p = map(x, y);
      if (spline.inside(p.x, p.y)) {
        r.image(x, y) = static_cast<float>(spline(p.x, p.y));
        r.mask(x, y) = 1;
      } else {
        r.image(x, y) = 0.0f;
        r.mask(x, y) = 0;
      }
    }
  });
  return r;
}

/// output(x) = img(x + flow(x)).
template <typename T>
WarpResult warp(const Image& img, const BasicFlowField<T>& flow, int order) {
  require_spline_order(order);
  require_same_shape(img, flow, "warp");
  const SplineImage spline(img, order);
  return resample(spline, img.width(), img.height(), [&](int x, int y) {
    return Point{x + static_cast<double>(flow.u(x, y)), y + static_cast<double>(flow.v(x, y))};
  });
}

/// output(x) = img(A x).
inline WarpResult apply_affine(const Image& img, const AffineTransform& a, int order) {
  require_spline_order(order);
  const SplineImage spline(img, order);
  return resample(spline, img.width(), img.height(), [&](int x, int y) { return a(x, y); });
}

}  // namespace ppx
