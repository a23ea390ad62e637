#pragma once

// Synthetic push-frame bursts with exact ground truth.
//
// Scene point x of the reference frame appears in frame i at
//   g_i(x) = A_i(x + i·d(x)),   d(x) = gain · elevation(x) · baseline,
// so that v_0(x) = v_i(g_i(x)). Frames are rendered by inverting g_i per
// pixel (fixed-point iteration) and sampling the scene texture there.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ppx/affine.hpp"
#include "ppx/affine_fit.hpp"
#include "ppx/burst.hpp"
#include "ppx/filter.hpp"
#include "ppx/grid.hpp"
#include "ppx/io.hpp"
#include "ppx/parallel.hpp"
#include "ppx/spline.hpp"

namespace ppx {

/// Constant-velocity object occupying a rectangle of the reference frame.
struct Mover {
  int x0 = 0, y0 = 0, width = 0, height = 0;
  double vx = 0.0, vy = 0.0;  // pixels per frame step

  bool contains(double x, double y) const {
    return x >= x0 && y >= y0 && x <= x0 + width - 1 && y <= y0 + height - 1;
  }
};

struct SceneSpec {
  Image texture;
  Grid<double> elevation;
  double parallax_gain = 1.0;  // px of disparity per elevation unit per frame step
  double affine_jitter = 0.0;
  double noise_sigma = 0.0;
  int n_frames = 9;
  std::vector<Mover> movers;
  std::uint64_t seed = 1;
  Point baseline_direction{1.0, 0.0};
  /// Analytic scene intensity; overrides `texture` when set.
  std::function<double(double, double)> pattern;
  /// Texture of the movers; defaults to the inverted scene texture.
  std::optional<Image> mover_texture;

  int width() const { return texture.width(); }
  int height() const { return texture.height(); }

  void validate() const {
    if (texture.empty()) throw SpecError("scene has no texture");
    if (elevation.width() != texture.width() || elevation.height() != texture.height()) {
      throw SpecError("elevation and texture differ in size");
    }
    if (!(parallax_gain >= 0.0)) throw SpecError("parallax_gain must be non-negative");
    if (!(noise_sigma >= 0.0)) throw SpecError("noise_sigma must be non-negative");
    if (!(affine_jitter >= 0.0)) throw SpecError("affine_jitter must be non-negative");
    if (n_frames < 3 || n_frames % 2 == 0) throw SpecError("n_frames must be odd and at least 3");
    const double norm = std::hypot(baseline_direction.x, baseline_direction.y);
    if (std::abs(norm - 1.0) > 1e-9) throw SpecError("baseline_direction must have unit norm");
    if (mover_texture && !mover_texture->same_shape(texture)) throw SpecError("mover texture size mismatch");
  }

  std::vector<int> indices() const {
    std::vector<int> out;
    for (int i = -(n_frames / 2); i <= n_frames / 2; ++i) out.push_back(i);
    return out;
  }
};

struct GroundTruth {
  /// Affinities after moving the affine part of d into them.
  AffinityMap affinities;
  /// Gauge-normalized disparity (no affine component), px per frame step.
  FlowFieldD disparity;
  Grid<double> elevation;
  /// Generator-side values before gauge normalization.
  AffinityMap raw_affinities;
  FlowFieldD raw_disparity;
  AffineField gauge;

  /// Full displacement of frame i under the exact (composed) model:
  /// x + flow(x) = A_i(x + i·d(x)).
  FlowFieldD frame_flow(int i) const {
    const AffineTransform& a = raw_affinities.at(i);
    FlowFieldD f(raw_disparity.width(), raw_disparity.height());
    for (int y = 0; y < f.height(); ++y) {
      for (int x = 0; x < f.width(); ++x) {
        const Point p = a(x + i * raw_disparity.u(x, y), y + i * raw_disparity.v(x, y));
        f.u(x, y) = p.x - x;
        f.v(x, y) = p.y - y;
      }
    }
    return f;
  }
};

struct SyntheticBurst {
  Burst burst;
  GroundTruth truth;
};

// ---------------------------------------------------------------------------
// Scene building blocks

/// Band-limited noise: white Gaussian noise blurred by `blur_sigma`, then
/// normalized to the given mean and standard deviation.
inline Image make_texture(int width, int height, std::uint64_t seed, double blur_sigma = 2.0, double mean = 128.0,
                          double stddev = 40.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Grid<double> noise(width, height);
  for (double& v : noise.samples()) v = normal(rng);
  const Grid<double> smooth = gaussian_blur(noise, blur_sigma);
  double m = 0.0;
  for (double v : smooth.samples()) m += v;
  m /= static_cast<double>(smooth.size());
  double var = 0.0;
  for (double v : smooth.samples()) var += (v - m) * (v - m);
  const double s = std::sqrt(var / static_cast<double>(smooth.size()));
  Image out(width, height);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(mean + stddev * (smooth[i] - m) / s);
  return out;
}

inline Grid<double> flat_elevation(int width, int height) { return Grid<double>(width, height, 0.0); }

/// Gaussian hill of unit height.
inline Grid<double> bump_elevation(int width, int height, double sigma_fraction = 0.15) {
  Grid<double> e(width, height);
  const double cx = 0.5 * (width - 1);
  const double cy = 0.5 * (height - 1);
  const double s = sigma_fraction * std::min(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double r2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (s * s);
      e(x, y) = std::exp(-0.5 * r2);
    }
  return e;
}

/// Smooth step rising from 0 to 1 along x across the middle of the image.
inline Grid<double> ramp_elevation(int width, int height, double width_fraction = 0.1) {
  Grid<double> e(width, height);
  const double cx = 0.5 * (width - 1);
  const double s = width_fraction * width;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) e(x, y) = 0.5 * (1.0 + std::tanh((x - cx) / s));
  return e;
}

/// A few rectangular blocks of differing heights, edges softened by a small
/// blur so the forward model stays invertible.
inline Grid<double> urban_elevation(int width, int height, std::uint64_t seed = 7) {
  Grid<double> e(width, height, 0.0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int blocks = 6;
  for (int b = 0; b < blocks; ++b) {
    const int bw = static_cast<int>(width * (0.12 + 0.12 * unit(rng)));
    const int bh = static_cast<int>(height * (0.12 + 0.12 * unit(rng)));
    const int x0 = static_cast<int>((width - bw) * (0.1 + 0.8 * unit(rng)));
    const int y0 = static_cast<int>((height - bh) * (0.1 + 0.8 * unit(rng)));
    const double hgt = 0.5 + 0.5 * unit(rng);
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x) e(x, y) = std::max(e(x, y), hgt);
  }
  return gaussian_blur(e, 1.5);
}

/// Checkerboard of the given period (pixels of the reference grid).
inline std::function<double(double, double)> checkerboard_pattern(double period, double phase = 0.3,
                                                                  double low = 40.0, double high = 215.0) {
  return [=](double x, double y) {
    const double sx = std::sin(2.0 * std::numbers::pi * (x + phase) / period);
    const double sy = std::sin(2.0 * std::numbers::pi * (y + phase) / period);
    return (sx * sy >= 0.0) ? high : low;
  };
}

// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t split_seed(std::uint64_t seed, int stream) {
  // splitmix64 step over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(stream + 1000003);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Solves A(x + s·d(x)) = target for x by fixed-point iteration.
template <typename DispFn>
Point invert_forward_map(const AffineTransform& a_inv, double s, Point target, DispFn&& disp) {
  const Point base = a_inv(target);
  Point x = base;
  for (int it = 0; it < 30; ++it) {
    const Point d = disp(x.x, x.y);
    const Point nx{base.x - s * d.x, base.y - s * d.y};
    const double delta = std::abs(nx.x - x.x) + std::abs(nx.y - x.y);
    x = nx;
    if (delta < 1e-12) break;
  }
  return x;
}

}  // namespace detail

inline SyntheticBurst generate_burst(const SceneSpec& spec) {
  spec.validate();
  const int w = spec.width();
  const int h = spec.height();

  SyntheticBurst out;
  GroundTruth& gt = out.truth;
  gt.elevation = spec.elevation;
  gt.raw_disparity = FlowFieldD(w, h);
  for (std::size_t k = 0; k < gt.raw_disparity.size(); ++k) {
    const double e = spec.parallax_gain * spec.elevation[k];
    gt.raw_disparity.u[k] = e * spec.baseline_direction.x;
    gt.raw_disparity.v[k] = e * spec.baseline_direction.y;
  }
  for (const Mover& m : spec.movers) {
    for (int y = std::max(0, m.y0); y < std::min(h, m.y0 + m.height); ++y)
      for (int x = std::max(0, m.x0); x < std::min(w, m.x0 + m.width); ++x) {
        gt.raw_disparity.u(x, y) += m.vx;
        gt.raw_disparity.v(x, y) += m.vy;
      }
  }

  // affine jitter: matrix entries within ±j, translation within ±j·max(w,h)/2
  const double tj = spec.affine_jitter * 0.5 * std::max(w, h);
  for (int i : spec.indices()) {
    AffineTransform a;
    if (i != 0 && spec.affine_jitter > 0.0) {
      std::mt19937_64 rng(detail::split_seed(spec.seed, 2 * i));
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      a.m11 += spec.affine_jitter * u(rng);
      a.m12 += spec.affine_jitter * u(rng);
      a.m21 += spec.affine_jitter * u(rng);
      a.m22 += spec.affine_jitter * u(rng);
      a.tx += tj * u(rng);
      a.ty += tj * u(rng);
    }
    gt.raw_affinities[i] = a;
  }

  // model validity: displacements must stay small relative to the image
  {
    double max_d = 0.0;
    for (std::size_t k = 0; k < gt.raw_disparity.size(); ++k) {
      max_d = std::max(max_d, std::hypot(gt.raw_disparity.u[k], gt.raw_disparity.v[k]));
    }
    const double limit = 0.25 * std::min(w, h);
    for (const auto& [i, a] : gt.raw_affinities) {
      double affine_disp = 0.0;
      for (const Point c : {Point{0, 0}, Point{w - 1.0, 0}, Point{0, h - 1.0}, Point{w - 1.0, h - 1.0}}) {
        const Point p = a(c);
        affine_disp = std::max(affine_disp, std::hypot(p.x - c.x, p.y - c.y));
      }
      if (std::abs(i) * max_d + affine_disp > limit) {
        throw SpecError("frame " + std::to_string(i) + " displacement exceeds 25% of the image size");
      }
    }
  }

  // gauge normalization, as the factorization would report it
  gt.disparity = gt.raw_disparity;
  gt.gauge = fit_affine_field(gt.disparity);
  subtract_affine_field(gt.disparity, gt.gauge);
  for (const auto& [i, a] : gt.raw_affinities) gt.affinities[i] = add_scaled(a, gt.gauge, static_cast<double>(i));

  // static-scene disparity (movers excluded) for the background inversion
  FlowFieldD scene_d(w, h);
  for (std::size_t k = 0; k < scene_d.size(); ++k) {
    const double e = spec.parallax_gain * spec.elevation[k];
    scene_d.u[k] = e * spec.baseline_direction.x;
    scene_d.v[k] = e * spec.baseline_direction.y;
  }
  const SplineBundle disp(std::vector<const Grid<double>*>{&scene_d.u, &scene_d.v}, 3);
  const auto scene_disp = [&](double x, double y) {
    double v[2];
    disp.evaluate(x, y, v);
    return Point{v[0], v[1]};
  };

  std::optional<SplineImage> texture;
  if (!spec.pattern) texture.emplace(spec.texture, 5);
  Image inverted;
  if (!spec.mover_texture && !spec.movers.empty()) {
    inverted = spec.texture;
    for (float& s : inverted.samples()) s = 255.0f - s;
  }
  std::optional<SplineImage> mover_tex;
  if (!spec.movers.empty()) mover_tex.emplace(spec.mover_texture ? *spec.mover_texture : inverted, 5);
  const auto scene_value = [&](double x, double y) { return spec.pattern ? spec.pattern(x, y) : (*texture)(x, y); };

  for (int i : spec.indices()) {
    const AffineTransform a_inv = gt.raw_affinities.at(i).inverse();
    Image frame(w, h);
    parallel_rows(0, h, [&](int y) {
      for (int x = 0; x < w; ++x) {
        const Point target{static_cast<double>(x), static_cast<double>(y)};
        bool done = false;
        for (const Mover& m : spec.movers) {
          const Point p = detail::invert_forward_map(a_inv, i, target, [&](double px, double py) {
            const Point d = scene_disp(px, py);
            return Point{d.x + m.vx, d.y + m.vy};
          });
          if (m.contains(p.x, p.y)) {
            frame(x, y) = static_cast<float>((*mover_tex)(p.x, p.y));
            done = true;
            break;
          }
        }
        if (done) continue;
        const Point p = detail::invert_forward_map(a_inv, i, target, scene_disp);
        frame(x, y) = static_cast<float>(scene_value(p.x, p.y));
      }
    });
    if (spec.noise_sigma > 0.0) {
      std::mt19937_64 rng(detail::split_seed(spec.seed, 2 * i + 1));
      std::normal_distribution<double> normal(0.0, spec.noise_sigma);
      for (float& s : frame.samples()) s = static_cast<float>(s + normal(rng));
    }
    out.burst.frames.emplace(i, std::move(frame));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

/// Mean endpoint error over the pixels selected by `mask` (all if absent).
template <typename A, typename B>
double flow_epe(const BasicFlowField<A>& estimate, const BasicFlowField<B>& truth, const Mask* mask = nullptr) {
  require_same_shape(estimate, truth, "flow_epe");
  if (mask) require_same_shape(estimate, *mask, "flow_epe mask");
  std::vector<double> rows(estimate.height(), 0.0);
  std::size_t count = 0;
  for (int y = 0; y < estimate.height(); ++y) {
    double acc = 0.0;
    for (int x = 0; x < estimate.width(); ++x) {
      if (mask && !(*mask)(x, y)) continue;
      const double du = static_cast<double>(estimate.u(x, y)) - static_cast<double>(truth.u(x, y));
      const double dv = static_cast<double>(estimate.v(x, y)) - static_cast<double>(truth.v(x, y));
      acc += std::hypot(du, dv);
      ++count;
    }
    rows[y] = acc;
  }
  if (count == 0) throw MetricError("flow_epe: empty mask");
  return deterministic_sum(rows) / static_cast<double>(count);
}

/// Mask selecting pixels at least `margin` away from the border.
inline Mask interior_mask(int width, int height, int margin) {
  Mask m(width, height, 0);
  for (int y = margin; y < height - margin; ++y)
    for (int x = margin; x < width - margin; ++x) m(x, y) = 1;
  return m;
}

// ---------------------------------------------------------------------------
// Named scenes and key=value serialization

enum class SceneKind { kFlat, kBump, kRamp, kUrban, kChecker };

inline SceneKind parse_scene_kind(const std::string& s) {
  if (s == "flat") return SceneKind::kFlat;
  if (s == "bump") return SceneKind::kBump;
  if (s == "ramp") return SceneKind::kRamp;
  if (s == "urban") return SceneKind::kUrban;
  if (s == "checker") return SceneKind::kChecker;
  throw ConfigError("unknown scene '" + s + "' (expected flat, bump, ramp, urban or checker)");
}

inline std::string scene_kind_name(SceneKind k) {
  switch (k) {
    case SceneKind::kFlat: return "flat";
    case SceneKind::kBump: return "bump";
    case SceneKind::kRamp: return "ramp";
    case SceneKind::kUrban: return "urban";
    case SceneKind::kChecker: return "checker";
  }
  return "flat";
}

/// Default scene: band-limited texture, unit-height relief, one pixel of
/// disparity per frame step at the top of the relief.
inline SceneSpec make_scene(SceneKind kind, int width, int height, std::uint64_t seed = 1) {
  SceneSpec s;
  s.seed = seed;
  s.texture = make_texture(width, height, detail::split_seed(seed, -1));
  s.parallax_gain = 1.0;
  s.affine_jitter = 0.001;
  s.noise_sigma = 1.0;
  s.n_frames = 9;
  switch (kind) {
    case SceneKind::kFlat: s.elevation = flat_elevation(width, height); break;
    case SceneKind::kBump: s.elevation = bump_elevation(width, height); break;
    case SceneKind::kRamp: s.elevation = ramp_elevation(width, height); break;
    case SceneKind::kUrban: s.elevation = urban_elevation(width, height, detail::split_seed(seed, -2)); break;
    case SceneKind::kChecker:
      s.elevation = flat_elevation(width, height);
      s.pattern = checkerboard_pattern(2.5);
      break;
  }
  return s;
}

namespace detail {

inline std::vector<Mover> parse_movers(const std::string& text) {
  // "x0,y0,w,h,vx,vy;x0,y0,..."
  std::vector<Mover> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    Mover m;
    char c1, c2, c3, c4, c5;
    std::istringstream is(item);
    if (!(is >> m.x0 >> c1 >> m.y0 >> c2 >> m.width >> c3 >> m.height >> c4 >> m.vx >> c5 >> m.vy) || c1 != ',' ||
        c2 != ',' || c3 != ',' || c4 != ',' || c5 != ',') {
      throw ConfigError("invalid mover '" + item + "' (expected x0,y0,w,h,vx,vy)");
    }
    out.push_back(m);
  }
  return out;
}

}  // namespace detail

/// Scene from flat key=value settings. Recognized keys: scene, width,
/// height, seed, parallax_gain, elevation_scale, affine_jitter, noise_sigma,
/// n_frames, baseline_angle_deg, texture_sigma, checker_period, movers,
/// texture (PFM/PGM path), elevation (PFM path).
inline SceneSpec scene_from_key_values(const KeyValues& kv) {
  const SceneKind kind = parse_scene_kind(kv.count("scene") ? kv.at("scene") : "bump");
  const int w = static_cast<int>(detail::kv_int(kv, "width", 128));
  const int h = static_cast<int>(detail::kv_int(kv, "height", w));
  if (w < 16 || h < 16) throw ConfigError("scene must be at least 16x16");
  const auto seed = static_cast<std::uint64_t>(detail::kv_int(kv, "seed", 1));
  SceneSpec s = make_scene(kind, w, h, seed);
  if (kv.count("texture_sigma")) {
    s.texture = make_texture(w, h, detail::split_seed(seed, -1), detail::kv_double(kv, "texture_sigma", 2.0));
  }
  if (kv.count("texture")) {
    s.texture = load_image(kv.at("texture"));
    if (s.texture.width() != w || s.texture.height() != h) throw ConfigError("texture size differs from width/height");
  }
  if (kv.count("elevation")) {
    s.elevation = grid_cast<double>(load_image(kv.at("elevation")));
    if (s.elevation.width() != w || s.elevation.height() != h) {
      throw ConfigError("elevation size differs from width/height");
    }
  }
  if (kind == SceneKind::kChecker && kv.count("checker_period")) {
    s.pattern = checkerboard_pattern(detail::kv_double(kv, "checker_period", 2.5));
  }
  const double elevation_scale = detail::kv_double(kv, "elevation_scale", 1.0);
  if (elevation_scale != 1.0) {
    for (double& e : s.elevation.samples()) e *= elevation_scale;
  }
  s.parallax_gain = detail::kv_double(kv, "parallax_gain", s.parallax_gain);
  s.affine_jitter = detail::kv_double(kv, "affine_jitter", s.affine_jitter);
  s.noise_sigma = detail::kv_double(kv, "noise_sigma", s.noise_sigma);
  s.n_frames = static_cast<int>(detail::kv_int(kv, "n_frames", s.n_frames));
  const double angle = detail::kv_double(kv, "baseline_angle_deg", 0.0) * std::numbers::pi / 180.0;
  s.baseline_direction = {std::cos(angle), std::sin(angle)};
  if (kv.count("movers")) s.movers = detail::parse_movers(kv.at("movers"));
  return s;
}

}  // namespace ppx
