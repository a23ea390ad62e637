#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ppx/grid.hpp"
#include "ppx/parallel.hpp"
#include "ppx/spline.hpp"

namespace ppx {

/// Separable Gaussian blur with mirror boundaries; preserves constants.
template <typename T>
Grid<T> gaussian_blur(const Grid<T>& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (double& k : kernel) k /= total;

  const int w = img.width();
  const int h = img.height();
  Grid<double> tmp(w, h);
  parallel_rows(0, h, [&](int y) {
    const auto in = img.row(y);
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += kernel[k + radius] * in[detail::mirror_index(x + k, w)];
      tmp(x, y) = s;
    }
  });
  Grid<T> out(w, h);
  parallel_rows(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += kernel[k + radius] * tmp(x, detail::mirror_index(y + k, h));
      out(x, y) = static_cast<T>(s);
    }
  });
  return out;
}

/// Bilinear sample with coordinates clamped to the domain.
template <typename T>
double sample_bilinear(const Grid<T>& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height() - 1));
  const int x0 = std::min(static_cast<int>(x), img.width() - 1);
  const int y0 = std::min(static_cast<int>(y), img.height() - 1);
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1.0 - fx) * img(x0, y0) + fx * img(x1, y0);
  const double bot = (1.0 - fx) * img(x0, y1) + fx * img(x1, y1);
  return (1.0 - fy) * top + fy * bot;
}

/// Resamples to (width, height) where output pixel X reads input X / ratio.
template <typename T>
Grid<T> resample_bilinear(const Grid<T>& img, int width, int height, double ratio) {
  Grid<T> out(width, height);
  parallel_rows(0, height, [&](int y) {
    for (int x = 0; x < width; ++x) out(x, y) = static_cast<T>(sample_bilinear(img, x / ratio, y / ratio));
  });
  return out;
}

inline int pyramid_dim(int dim, double scale_factor) {
  return static_cast<int>(std::ceil(dim * scale_factor - 1e-9));
}

template <typename T>
struct BasicPyramid {
  std::vector<Grid<T>> levels;  // finest first
  double scale_factor = 0.5;

  std::size_t size() const { return levels.size(); }
  const Grid<T>& operator[](std::size_t i) const { return levels[i]; }
  /// Coordinate scale of level i relative to the finest level.
  double level_scale(std::size_t i) const { return std::pow(scale_factor, static_cast<double>(i)); }
};

using Pyramid = BasicPyramid<float>;

inline void validate_pyramid_params(double scale_factor, int min_size) {
  if (!(scale_factor >= 0.5 && scale_factor <= 0.95)) {
    throw ContractViolation("pyramid scale factor must lie in [0.5, 0.95], got " + std::to_string(scale_factor));
  }
  if (min_size < 16) throw ContractViolation("pyramid min_size must be at least 16");
}

/// Number of levels for a width x height image.
inline int pyramid_levels(int width, int height, double scale_factor, int min_size) {
  int levels = 1;
  int w = width, h = height;
  while (true) {
    const int nw = pyramid_dim(w, scale_factor);
    const int nh = pyramid_dim(h, scale_factor);
    if (std::min(nw, nh) < min_size || (nw == w && nh == h)) break;
    w = nw;
    h = nh;
    ++levels;
  }
  return levels;
}

template <typename T>
BasicPyramid<T> build_pyramid(const Grid<T>& img, double scale_factor, int min_size) {
  validate_pyramid_params(scale_factor, min_size);
  BasicPyramid<T> pyr;
  pyr.scale_factor = scale_factor;
  pyr.levels.push_back(img);
  const int n = pyramid_levels(img.width(), img.height(), scale_factor, min_size);
  const double sigma = 0.6 * std::sqrt(1.0 / (scale_factor * scale_factor) - 1.0);
  for (int l = 1; l < n; ++l) {
    const Grid<T>& prev = pyr.levels.back();
    const Grid<T> smooth = gaussian_blur(prev, sigma);
    pyr.levels.push_back(resample_bilinear(smooth, pyramid_dim(prev.width(), scale_factor),
                                           pyramid_dim(prev.height(), scale_factor), scale_factor));
  }
  return pyr;
}

/// Central differences inside, one-sided differences on the border.
template <typename T>
std::pair<Grid<T>, Grid<T>> gradients(const Grid<T>& img) {
  const int w = img.width();
  const int h = img.height();
  if (w < 3 || h < 3) throw ContractViolation("gradients need an image of at least 3x3");
  Grid<T> gx(w, h), gy(w, h);
  parallel_rows(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      if (x == 0) {
        gx(x, y) = img(1, y) - img(0, y);
      } else if (x == w - 1) {
        gx(x, y) = img(w - 1, y) - img(w - 2, y);
      } else {
        gx(x, y) = static_cast<T>(0.5 * (static_cast<double>(img(x + 1, y)) - img(x - 1, y)));
      }
      if (y == 0) {
        gy(x, y) = img(x, 1) - img(x, 0);
      } else if (y == h - 1) {
        gy(x, y) = img(x, h - 1) - img(x, h - 2);
      } else {
        gy(x, y) = static_cast<T>(0.5 * (static_cast<double>(img(x, y + 1)) - img(x, y - 1)));
      }
    }
  });
  return {std::move(gx), std::move(gy)};
}

/// Brings a flow from a coarser level to (width, height): bilinear resampling
/// with vectors scaled by 1 / ratio.
template <typename T>
BasicFlowField<T> upscale_flow(const BasicFlowField<T>& coarse, int width, int height, double ratio) {
  BasicFlowField<T> out(width, height);
  parallel_rows(0, height, [&](int y) {
    for (int x = 0; x < width; ++x) {
      out.u(x, y) = static_cast<T>(sample_bilinear(coarse.u, x * ratio, y * ratio) / ratio);
      out.v(x, y) = static_cast<T>(sample_bilinear(coarse.v, x * ratio, y * ratio) / ratio);
    }
  });
  return out;
}

/// Inverse of upscale_flow for initial guesses supplied at full resolution.
template <typename T>
BasicFlowField<T> downscale_flow(const BasicFlowField<T>& fine, int width, int height, double ratio) {
  BasicFlowField<T> out(width, height);
  parallel_rows(0, height, [&](int y) {
    for (int x = 0; x < width; ++x) {
      out.u(x, y) = static_cast<T>(sample_bilinear(fine.u, x / ratio, y / ratio) * ratio);
      out.v(x, y) = static_cast<T>(sample_bilinear(fine.v, x / ratio, y / ratio) * ratio);
    }
  });
  return out;
}

}  // namespace ppx
