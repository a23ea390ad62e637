#pragma once

// End-to-end processing of one burst:
//   pairwise flows -> plane+parallax factorization -> stabilization
//   -> multi-frame flow -> aligned-stack diagnostics -> super-resolution
//   -> surface model,
// writing every intermediate artifact and a metrics record.

#include <glob.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ppx/burst.hpp"
#include "ppx/flow_params.hpp"
#include "ppx/fusion.hpp"
#include "ppx/io.hpp"
#include "ppx/multiframe_flow.hpp"
#include "ppx/pairwise_flow.hpp"
#include "ppx/plane_parallax.hpp"

namespace ppx {

enum class PipelineMode { kSr, kDsm };

struct PipelineConfig {
  std::vector<std::filesystem::path> inputs;  // frames in acquisition order
  int reference = -1;                         // position in `inputs`; -1 = middle
  std::filesystem::path output = "out";
  PipelineMode mode = PipelineMode::kSr;
  FlowParams pairwise;   // pairwise flows feeding the factorization
  FlowParams multiframe; // alpha preset by mode
  int subsample_step = 4;
  double cg_tol = 1e-10;
  int cg_max_iters = 5000;
  int zoom = 2;
  double splat_sigma = 0.5;
  std::optional<Point> dsm_direction;
  std::optional<double> dsm_scale;
  bool run_fusion = true;
  bool run_sr = true;
  bool run_dsm = true;

  int reference_position() const { return reference < 0 ? static_cast<int>(inputs.size()) / 2 : reference; }

  void validate() const {
    if (inputs.size() < 3) throw ConfigError("pipeline needs at least three input frames");
    const int r = reference_position();
    if (r < 0 || r >= static_cast<int>(inputs.size())) throw ConfigError("reference position out of range");
    for (const auto& p : inputs) {
      if (!std::filesystem::is_regular_file(p)) throw IoError("input not found: " + p.string());
    }
    if (subsample_step < 1) throw ConfigError("subsample_step must be at least 1");
    if (zoom != 2 && zoom != 3) throw ConfigError("zoom must be 2 or 3");
    if (!(splat_sigma > 0.0)) throw ConfigError("splat_sigma must be positive");
    if (!(cg_tol > 0.0) || cg_max_iters < 1) throw ConfigError("invalid conjugate-gradient controls");
    try {
      pairwise.validate();
      multiframe.validate();
    } catch (const ContractViolation& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline bool has_glob_chars(const std::string& s) { return s.find_first_of("*?[") != std::string::npos; }

inline std::vector<std::filesystem::path> expand_inputs(const std::string& spec) {
  std::vector<std::filesystem::path> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (!has_glob_chars(item)) {
      out.emplace_back(item);
      continue;
    }
    glob_t g{};
    const int rc = ::glob(item.c_str(), 0, nullptr, &g);
    if (rc == GLOB_NOMATCH) {
      globfree(&g);
      throw IoError("no input matches " + item);
    }
    if (rc != 0) {
      globfree(&g);
      throw IoError("cannot expand " + item);
    }
    std::vector<std::filesystem::path> matched;
    for (std::size_t k = 0; k < g.gl_pathc; ++k) matched.emplace_back(g.gl_pathv[k]);
    globfree(&g);
    std::sort(matched.begin(), matched.end());
    out.insert(out.end(), matched.begin(), matched.end());
  }
  return out;
}

inline bool kv_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean for '" + key + "': " + v);
}

inline Point parse_point(const std::string& key, const std::string& text) {
  Point p;
  char comma = 0;
  std::istringstream is(text);
  if (!(is >> p.x >> comma >> p.y) || comma != ',') throw ConfigError("invalid vector for '" + key + "': " + text);
  return p;
}

inline void read_flow_params(const KeyValues& kv, const std::string& prefix, FlowParams& p) {
  p.alpha = kv_double(kv, prefix + "alpha", p.alpha);
  p.gamma = kv_double(kv, prefix + "gamma", p.gamma);
  p.epsilon = kv_double(kv, prefix + "epsilon", p.epsilon);
  p.scale_factor = kv_double(kv, prefix + "scale_factor", p.scale_factor);
  p.min_size = static_cast<int>(kv_int(kv, prefix + "min_size", p.min_size));
  p.outer_iters = static_cast<int>(kv_int(kv, prefix + "outer_iters", p.outer_iters));
  p.inner_iters = static_cast<int>(kv_int(kv, prefix + "inner_iters", p.inner_iters));
  p.sor_iters = static_cast<int>(kv_int(kv, prefix + "sor_iters", p.sor_iters));
  p.sor_omega = kv_double(kv, prefix + "sor_omega", p.sor_omega);
  p.interp_order = static_cast<int>(kv_int(kv, prefix + "interp_order", p.interp_order));
}

}  // namespace detail

/// Keys accepted by `pipeline_config_from_key_values` (also the CLI flags).
inline const std::vector<std::string>& pipeline_config_keys() {
  static const std::vector<std::string> keys = {
      "inputs", "reference", "output", "mode", "alpha", "gamma", "epsilon", "scale_factor", "min_size",
      "outer_iters", "inner_iters", "sor_iters", "sor_omega", "interp_order", "pairwise_alpha",
      "subsample_step", "cg_tol", "cg_max_iters", "zoom", "splat_sigma", "dsm_direction", "dsm_scale",
      "fusion", "sr", "dsm"};
  return keys;
}

/// Solver settings (gamma, epsilon, pyramid, iterations) apply to both
/// variational stages; `alpha` is the multi-frame weight (preset by `mode`:
/// sr -> 10, dsm -> 60) and `pairwise_alpha` the weight of the pairwise flows.
inline PipelineConfig pipeline_config_from_key_values(const KeyValues& kv) {
  for (const auto& [k, v] : kv) {
    const auto& keys = pipeline_config_keys();
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("unknown config key '" + k + "'");
  }
  PipelineConfig c;
  if (!kv.count("inputs")) throw ConfigError("missing 'inputs'");
  c.inputs = detail::expand_inputs(kv.at("inputs"));
  c.reference = static_cast<int>(detail::kv_int(kv, "reference", -1));
  if (kv.count("output")) c.output = kv.at("output");
  const std::string mode = kv.count("mode") ? kv.at("mode") : "sr";
  if (mode == "sr") {
    c.mode = PipelineMode::kSr;
    c.multiframe.alpha = 10.0;
  } else if (mode == "dsm") {
    c.mode = PipelineMode::kDsm;
    c.multiframe.alpha = 60.0;
  } else {
    throw ConfigError("mode must be 'sr' or 'dsm'");
  }
  detail::read_flow_params(kv, "", c.multiframe);
  c.pairwise = c.multiframe;
  c.pairwise.alpha = detail::kv_double(kv, "pairwise_alpha", 10.0);
  c.subsample_step = static_cast<int>(detail::kv_int(kv, "subsample_step", c.subsample_step));
  c.cg_tol = detail::kv_double(kv, "cg_tol", c.cg_tol);
  c.cg_max_iters = static_cast<int>(detail::kv_int(kv, "cg_max_iters", c.cg_max_iters));
  c.zoom = static_cast<int>(detail::kv_int(kv, "zoom", c.zoom));
  c.splat_sigma = detail::kv_double(kv, "splat_sigma", c.splat_sigma);
  if (kv.count("dsm_direction")) c.dsm_direction = detail::parse_point("dsm_direction", kv.at("dsm_direction"));
  if (kv.count("dsm_scale")) c.dsm_scale = detail::kv_double(kv, "dsm_scale", 1.0);
  c.run_fusion = detail::kv_bool(kv, "fusion", true);
  c.run_sr = detail::kv_bool(kv, "sr", true);
  c.run_dsm = detail::kv_bool(kv, "dsm", true);
  return c;
}

/// Raised when a stage fails; keeps the category of the original error.
template <typename Base>
struct StageError : Base {
  std::string stage;
  StageError(std::string name, const std::string& what) : Base("stage '" + name + "': " + what), stage(std::move(name)) {}
};

struct PipelineResult {
  Burst burst;
  AffinityMap affinities;
  FlowField factor_disparity;
  FlowField disparity;
  std::optional<TemporalStd> std_rigid, std_parallax;
  std::optional<Image> super_resolved;
  std::optional<SurfaceModel> dsm;
  MetricsRecord metrics;
};

namespace detail {

template <typename F>
void run_stage(const std::string& name, F&& body) {
  try {
    body();
  } catch (const NumericalError& e) {
    throw StageError<NumericalError>(name, e.what());
  } catch (const Error& e) {
    throw StageError<Error>(name, e.what());
  }
}

inline std::string frame_tag(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%+03d", i);
  return buf;
}

}  // namespace detail

/// Loads the configured inputs into a burst indexed relative to the reference.
inline Burst load_burst(const PipelineConfig& c) {
  Burst b;
  const int r = c.reference_position();
  for (int k = 0; k < static_cast<int>(c.inputs.size()); ++k) b.frames.emplace(k - r, load_image(c.inputs[k]));
  b.validate();
  return b;
}

inline PipelineResult run_pipeline(const PipelineConfig& c) {
  c.validate();
  PipelineResult res;
  res.burst = load_burst(c);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(c.output, ec);
  if (ec) throw IoError("cannot create " + c.output.string() + ": " + ec.message());
  const Burst& b = res.burst;
  MetricsRecord& m = res.metrics;
  m.add("frames", static_cast<double>(b.size()));
  m.add("width", static_cast<double>(b.width()));
  m.add("height", static_cast<double>(b.height()));
  m.add("mode", c.mode == PipelineMode::kSr ? std::string("sr") : std::string("dsm"));
  m.add("alpha", c.multiframe.alpha);
  m.add("pairwise_alpha", c.pairwise.alpha);
  const auto write_metrics = [&] { m.save(c.output / "metrics.txt"); };

  FactorizationProblem fp;
  fp.subsample_step = c.subsample_step;
  try {
    detail::run_stage("pairwise", [&] {
      for (const auto& [i, img] : b.frames) {
        if (i == 0) continue;
        fp.flows[i] = estimate_pairwise_flow(b.reference(), img, c.pairwise);
        save_flow(fp.flows[i], c.output / ("flow_" + detail::frame_tag(i) + ".flo"));
      }
    });

    detail::run_stage("factor", [&] {
      const FactorizationResult fr = solve_plane_parallax(fp, c.cg_tol, c.cg_max_iters);
      res.affinities = fr.affinities;
      res.factor_disparity = fr.disparity;
      save_affinities(fr.affinities, c.output / "affinities.txt");
      save_flow(fr.disparity, c.output / "disparity_factor.flo");
      m.add("factor_residual_rms", fr.residual_rms);
      m.add("factor_cg_iterations", static_cast<double>(fr.cg_iterations));
      m.add("factor_cg_relative_residual", fr.cg_relative_residual);
      m.add("factor_converged", fr.converged ? 1.0 : 0.0);
    });

    detail::run_stage("stabilize", [&] {
      const Burst st = stabilize(b, res.affinities);
      for (const auto& [i, img] : st.frames) save_pfm(img, c.output / ("stabilized_" + detail::frame_tag(i) + ".pfm"));
    });

    detail::run_stage("mfflow", [&] {
      MultiFrameProblem mp;
      mp.frames = b;
      mp.affinities = res.affinities;
      mp.params = c.multiframe;
      mp.init = res.factor_disparity;
      SolverTrace trace;
      res.disparity = estimate_multiframe_flow(mp, &trace);
      save_flow(res.disparity, c.output / "disparity.flo");
      if (!trace.finest_energies.empty()) {
        m.add("mf_energy_initial", trace.finest_energies.front());
        m.add("mf_energy_final", trace.finest_energies.back());
      }
      double max_d = 0.0;
      for (std::size_t k = 0; k < res.disparity.size(); ++k) {
        max_d = std::max(max_d, std::hypot(static_cast<double>(res.disparity.u[k]), res.disparity.v[k]));
      }
      m.add("disparity_max", max_d);
    });

    if (c.run_fusion) {
      detail::run_stage("fusion", [&] {
        const FlowField zero(b.width(), b.height());
        res.std_rigid = temporal_std(align_stack(b, res.affinities, zero, 1));
        res.std_parallax = temporal_std(align_stack(b, res.affinities, res.disparity, 1));
        save_pfm(res.std_rigid->std_map, c.output / "std_rigid.pfm");
        save_pfm(res.std_parallax->std_map, c.output / "std_parallax.pfm");
        m.add("std_rigid", res.std_rigid->mean);
        m.add("std_parallax", res.std_parallax->mean);
        m.add("std_ratio", res.std_parallax->mean / res.std_rigid->mean);
      });
    }

    if (c.run_sr) {
      detail::run_stage("sr", [&] {
        res.super_resolved = super_resolve(b, res.affinities, res.disparity, c.zoom, c.splat_sigma);
        save_pfm(*res.super_resolved, c.output / "sr.pfm");
        save_pgm(*res.super_resolved, c.output / "sr.pgm");
        m.add("sr_zoom", static_cast<double>(c.zoom));
      });
    }

    if (c.run_dsm) {
      detail::run_stage("dsm", [&] {
        res.dsm = disparity_to_dsm(res.disparity, c.dsm_direction, c.dsm_scale);
        save_pfm(grid_cast<float>(res.dsm->heights), c.output / "dsm.pfm");
        m.add("dsm_direction_x", res.dsm->direction.x);
        m.add("dsm_direction_y", res.dsm->direction.y);
        m.add("dsm_degenerate", res.dsm->degenerate ? 1.0 : 0.0);
        m.add("dsm_tv", total_variation(res.dsm->heights));
      });
    }
  } catch (const Error& e) {
    m.add("failed_stage", std::string(e.what()));
    write_metrics();
    throw;
  }
  write_metrics();
  return res;
}

}  // namespace ppx
