// ppx: command-line front end.
//
// Exit codes: 0 success, 1 I/O / format / configuration error,
// 2 numerical failure (solver divergence, singular system, empty metric).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ppx/fusion.hpp"
#include "ppx/io.hpp"
#include "ppx/multiframe_flow.hpp"
#include "ppx/pairwise_flow.hpp"
#include "ppx/parallel.hpp"
#include "ppx/pipeline.hpp"
#include "ppx/plane_parallax.hpp"
#include "ppx/synth.hpp"

namespace fs = std::filesystem;
using namespace ppx;

namespace {

void add_flow_options(CLI::App* app, FlowParams& p) {
  app->add_option("--alpha", p.alpha, "smoothness weight")->capture_default_str();
  app->add_option("--gamma", p.gamma, "gradient-constancy weight")->capture_default_str();
  app->add_option("--epsilon", p.epsilon, "robust penalty offset")->capture_default_str();
  app->add_option("--scale_factor", p.scale_factor, "pyramid ratio")->capture_default_str();
  app->add_option("--min_size", p.min_size, "coarsest pyramid dimension")->capture_default_str();
  app->add_option("--outer_iters", p.outer_iters)->capture_default_str();
  app->add_option("--inner_iters", p.inner_iters)->capture_default_str();
  app->add_option("--sor_iters", p.sor_iters)->capture_default_str();
  app->add_option("--sor_omega", p.sor_omega)->capture_default_str();
  app->add_option("--interp_order", p.interp_order)->capture_default_str();
}

struct FrameArgs {
  std::vector<std::string> paths;
  int reference = -1;
};

void add_frame_options(CLI::App* app, FrameArgs& f, bool required = true) {
  auto* opt = app->add_option("frames", f.paths, "frames in acquisition order");
  if (required) opt->required();
  app->add_option("--reference", f.reference, "position of the reference frame (default: middle)");
}

Burst load_frames(const FrameArgs& f) {
  if (f.paths.empty()) throw ConfigError("no frames given");
  const int n = static_cast<int>(f.paths.size());
  const int r = f.reference < 0 ? n / 2 : f.reference;
  if (r >= n) throw ConfigError("reference position out of range");
  Burst b;
  for (int k = 0; k < n; ++k) b.frames.emplace(k - r, load_image(f.paths[k]));
  b.validate();
  return b;
}

int index_from_name(const std::string& path) {
  const std::string stem = fs::path(path).stem().string();
  const auto pos = stem.find_last_of('_');
  try {
    std::size_t used = 0;
    const std::string tail = stem.substr(pos == std::string::npos ? 0 : pos + 1);
    const int i = std::stoi(tail, &used);
    if (used == tail.size()) return i;
  } catch (const std::exception&) {
  }
  throw ConfigError("cannot infer the frame index of " + path + " (use --indices)");
}

std::vector<int> parse_indices(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("invalid index list: " + text);
    }
  }
  return out;
}

std::map<int, FlowField> load_indexed_flows(const std::vector<std::string>& paths, const std::string& indices) {
  std::vector<int> idx;
  if (!indices.empty()) {
    idx = parse_indices(indices);
    if (idx.size() != paths.size()) throw ConfigError("--indices must list one index per flow");
  } else {
    for (const auto& p : paths) idx.push_back(index_from_name(p));
  }
  std::map<int, FlowField> flows;
  for (std::size_t k = 0; k < paths.size(); ++k) {
    if (!flows.emplace(idx[k], load_flow(paths[k])).second) {
      throw ConfigError("duplicate frame index " + std::to_string(idx[k]));
    }
  }
  return flows;
}

std::string tag(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%+03d", i);
  return buf;
}

void print(const MetricsRecord& m) { std::cout << m.str(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parallax estimation and fusion for push-frame bursts"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = runtime default)");

  // flow ---------------------------------------------------------------
  auto* flow = app.add_subcommand("flow", "pairwise optical flow from REF to OTHER");
  std::string flow_ref, flow_other, flow_out, flow_init, flow_truth;
  FlowParams flow_params;
  flow->add_option("ref", flow_ref)->required();
  flow->add_option("other", flow_other)->required();
  flow->add_option("-o,--output", flow_out, "output .flo")->required();
  flow->add_option("--init", flow_init, "initial flow");
  flow->add_option("--truth", flow_truth, "ground-truth flow; prints epe");
  add_flow_options(flow, flow_params);

  // factor -------------------------------------------------------------
  auto* factor = app.add_subcommand("factor", "plane+parallax factorization of pairwise flows");
  std::vector<std::string> factor_flows;
  std::string factor_indices, factor_aff_out, factor_d_out, factor_rough;
  int factor_step = 4;
  double cg_tol = 1e-10;
  int cg_max = 5000;
  factor->add_option("flows", factor_flows, "flows reference -> frame i (index from name suffix _<i>)")->required();
  factor->add_option("--indices", factor_indices, "comma-separated frame indices, one per flow");
  factor->add_option("--affinities", factor_aff_out, "output affinity file")->required();
  factor->add_option("--disparity", factor_d_out, "output disparity .flo")->required();
  factor->add_option("--subsample_step", factor_step)->capture_default_str();
  factor->add_option("--rough_affinities", factor_rough, "rough affinities for the per-frame Jacobians");
  factor->add_option("--cg_tol", cg_tol)->capture_default_str();
  factor->add_option("--cg_max_iters", cg_max)->capture_default_str();

  // stabilize ------------------------------------------------------------
  auto* stab = app.add_subcommand("stabilize", "resample frames onto the reference plane");
  FrameArgs stab_frames;
  std::string stab_aff, stab_out;
  add_frame_options(stab, stab_frames);
  stab->add_option("--affinities", stab_aff)->required();
  stab->add_option("-o,--output", stab_out, "output directory")->required();

  // mfflow -----------------------------------------------------------------
  auto* mf = app.add_subcommand("mfflow", "joint multi-frame disparity");
  FrameArgs mf_frames;
  std::string mf_aff, mf_init, mf_out;
  FlowParams mf_params;
  add_frame_options(mf, mf_frames);
  mf->add_option("--affinities", mf_aff, "affinities (default: frames already stabilized)");
  mf->add_option("--init", mf_init, "initial disparity");
  mf->add_option("-o,--output", mf_out, "output .flo")->required();
  add_flow_options(mf, mf_params);

  // fuse -----------------------------------------------------------------
  auto* fuse = app.add_subcommand("fuse", "shift-and-add super-resolution and stack diagnostics");
  FrameArgs fuse_frames;
  std::string fuse_aff, fuse_d, fuse_out, fuse_std;
  int fuse_zoom = 2;
  double fuse_sigma = 0.5;
  add_frame_options(fuse, fuse_frames);
  fuse->add_option("--affinities", fuse_aff)->required();
  fuse->add_option("--disparity", fuse_d, "disparity (default: zero, rigid fusion)");
  fuse->add_option("-o,--output", fuse_out, "output prefix; writes <prefix>.pfm and <prefix>.pgm");
  fuse->add_option("--std", fuse_std, "temporal standard deviation map (.pfm)");
  fuse->add_option("--zoom", fuse_zoom)->capture_default_str();
  fuse->add_option("--splat_sigma", fuse_sigma)->capture_default_str();

  // dsm ------------------------------------------------------------------
  auto* dsm = app.add_subcommand("dsm", "relative surface model from a disparity");
  std::string dsm_in, dsm_out, dsm_dir;
  std::optional<double> dsm_scale;
  dsm->add_option("disparity", dsm_in)->required();
  dsm->add_option("-o,--output", dsm_out, "output .pfm")->required();
  dsm->add_option("--direction", dsm_dir, "baseline direction x,y (default: principal axis of d)");
  dsm->add_option("--scale", dsm_scale, "height units per pixel of disparity");

  // synth ----------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "render a synthetic push-frame burst");
  std::string synth_cfg, synth_out;
  std::map<std::string, std::string> synth_flags;
  synth->add_option("--config", synth_cfg, "scene key=value file");
  synth->add_option("-o,--output", synth_out, "output directory")->required();
  for (const char* key : {"scene", "width", "height", "seed", "texture_sigma", "texture", "elevation", "checker_period",
                          "elevation_scale", "parallax_gain", "affine_jitter", "noise_sigma", "n_frames",
                          "baseline_angle_deg", "movers"}) {
    synth->add_option(std::string("--") + key, synth_flags[key]);
  }

  // eval -----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "error metrics against ground truth");
  std::string eval_est, eval_truth, eval_aff, eval_indices;
  std::vector<std::string> eval_pairwise;
  FrameArgs eval_frames;
  int eval_margin = 0;
  eval->add_option("--estimate", eval_est, "estimated disparity")->required();
  eval->add_option("--truth", eval_truth, "ground-truth disparity")->required();
  eval->add_option("--margin", eval_margin, "ignore this many border pixels")->capture_default_str();
  eval->add_option("--pairwise", eval_pairwise, "pairwise flows to score after baseline normalization");
  eval->add_option("--indices", eval_indices, "frame indices of the pairwise flows");
  eval->add_option("--affinities", eval_aff, "affinities for baseline normalization and stack metrics");
  add_frame_options(eval, eval_frames, false);

  // pipeline ---------------------------------------------------------------
  auto* pipe = app.add_subcommand("pipeline", "full processing chain");
  std::string pipe_cfg;
  std::map<std::string, std::string> pipe_flags;
  pipe->add_option("--config", pipe_cfg, "key=value configuration file");
  for (const std::string& key : pipeline_config_keys()) pipe->add_option("--" + key, pipe_flags[key]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (threads > 0) set_thread_count(threads);

    if (*flow) {
      const Image ref = load_image(flow_ref);
      const Image other = load_image(flow_other);
      std::optional<FlowField> init;
      if (!flow_init.empty()) init = load_flow(flow_init);
      std::optional<FlowField> truth;
      if (!flow_truth.empty()) truth = load_flow(flow_truth);
      const FlowField f = estimate_pairwise_flow(ref, other, flow_params, init);
      save_flow(f, flow_out);
      MetricsRecord m;
      m.add("energy", pairwise_energy(ref, other, f, flow_params));
      if (truth) m.add("epe", flow_epe(f, *truth));
      print(m);
    } else if (*factor) {
      FactorizationProblem pb;
      pb.flows = load_indexed_flows(factor_flows, factor_indices);
      pb.subsample_step = factor_step;
      if (!factor_rough.empty()) pb.rough_affinities = load_affinities(factor_rough);
      const FactorizationResult r = solve_plane_parallax(pb, cg_tol, cg_max);
      save_affinities(r.affinities, factor_aff_out);
      save_flow(r.disparity, factor_d_out);
      MetricsRecord m;
      m.add("residual_rms", r.residual_rms);
      m.add("cg_iterations", static_cast<double>(r.cg_iterations));
      m.add("cg_relative_residual", r.cg_relative_residual);
      m.add("converged", r.converged ? 1.0 : 0.0);
      print(m);
    } else if (*stab) {
      const Burst b = load_frames(stab_frames);
      const AffinityMap a = load_affinities(stab_aff);
      const Burst s = stabilize(b, a);
      fs::create_directories(stab_out);
      for (const auto& [i, img] : s.frames) {
        save_pfm(img, fs::path(stab_out) / ("stabilized_" + tag(i) + ".pfm"));
        Image mask(img.width(), img.height());
        const Mask* m = s.mask(i);
        for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = (!m || (*m)[k]) ? 255.0f : 0.0f;
        save_pgm(mask, fs::path(stab_out) / ("mask_" + tag(i) + ".pgm"));
      }
    } else if (*mf) {
      MultiFrameProblem pb;
      pb.frames = load_frames(mf_frames);
      if (!mf_aff.empty()) pb.affinities = load_affinities(mf_aff);
      if (!mf_init.empty()) pb.init = load_flow(mf_init);
      pb.params = mf_params;
      SolverTrace trace;
      const FlowField d = estimate_multiframe_flow(pb, &trace);
      save_flow(d, mf_out);
      MetricsRecord m;
      if (!trace.finest_energies.empty()) {
        m.add("energy_initial", trace.finest_energies.front());
        m.add("energy", trace.finest_energies.back());
      }
      print(m);
    } else if (*fuse) {
      const Burst b = load_frames(fuse_frames);
      const AffinityMap a = load_affinities(fuse_aff);
      FlowField d = fuse_d.empty() ? FlowField(b.width(), b.height()) : load_flow(fuse_d);
      if (fuse_out.empty() && fuse_std.empty()) throw ConfigError("nothing to do: give --output and/or --std");
      MetricsRecord m;
      std::optional<Image> sr;
      std::optional<TemporalStd> ts;
      if (!fuse_out.empty()) sr = super_resolve(b, a, d, fuse_zoom, fuse_sigma);
      if (!fuse_std.empty()) ts = temporal_std(align_stack(b, a, d, 1));
      if (sr) {
        save_pfm(*sr, fuse_out + ".pfm");
        save_pgm(*sr, fuse_out + ".pgm");
      }
      if (ts) {
        save_pfm(ts->std_map, fuse_std);
        m.add("std_mean", ts->mean);
      }
      print(m);
    } else if (*dsm) {
      const FlowField d = load_flow(dsm_in);
      std::optional<Point> dir;
      if (!dsm_dir.empty()) dir = detail::parse_point("direction", dsm_dir);
      const SurfaceModel s = disparity_to_dsm(d, dir, dsm_scale);
      save_pfm(grid_cast<float>(s.heights), dsm_out);
      MetricsRecord m;
      m.add("direction_x", s.direction.x);
      m.add("direction_y", s.direction.y);
      m.add("degenerate", s.degenerate ? 1.0 : 0.0);
      m.add("tv", total_variation(s.heights));
      print(m);
    } else if (*synth) {
      KeyValues kv;
      if (!synth_cfg.empty()) kv = load_key_values(synth_cfg);
      for (const auto& [k, v] : synth_flags) {
        if (!v.empty()) kv[k] = v;
      }
      const SceneSpec spec = scene_from_key_values(kv);
      const SyntheticBurst sb = generate_burst(spec);
      const fs::path out(synth_out);
      fs::create_directories(out);
      const int half = spec.n_frames / 2;
      for (const auto& [i, img] : sb.burst.frames) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%02d.pfm", i + half);
        save_pfm(img, out / name);
      }
      save_flow(sb.truth.disparity, out / "truth_disparity.flo");
      save_affinities(sb.truth.affinities, out / "truth_affinities.txt");
      save_pfm(grid_cast<float>(sb.truth.elevation), out / "truth_elevation.pfm");
    } else if (*eval) {
      const FlowField est = load_flow(eval_est);
      const FlowField truth = load_flow(eval_truth);
      std::map<int, FlowField> pairwise;
      if (!eval_pairwise.empty()) pairwise = load_indexed_flows(eval_pairwise, eval_indices);
      std::optional<AffinityMap> aff;
      if (!eval_aff.empty()) aff = load_affinities(eval_aff);
      std::optional<Burst> frames;
      if (!eval_frames.paths.empty()) frames = load_frames(eval_frames);
      if (!est.same_shape(truth)) throw MetricError("estimate and truth differ in size");
      const Mask mask = interior_mask(truth.width(), truth.height(), eval_margin);
      MetricsRecord m;
      m.add("epe", flow_epe(est, truth, &mask));
      if (!pairwise.empty()) {
        if (!aff) throw ConfigError("--pairwise needs --affinities");
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [i, f] : pairwise) {
          if (i == 0) continue;
          if (!f.same_shape(truth)) throw MetricError("pairwise flow " + std::to_string(i) + " differs in size");
          const auto it = aff->find(i);
          if (it == aff->end()) throw ConfigError("no affinity for frame " + std::to_string(i));
          const double e = flow_epe(baseline_normalized_flow(f, it->second, i), truth, &mask);
          m.add("epe_pairwise_" + std::to_string(i), e);
          best = std::min(best, e);
        }
        m.add("epe_pairwise_best", best);
      }
      if (frames) {
        if (!aff) throw ConfigError("stack metrics need --affinities");
        const FlowField zero(truth.width(), truth.height());
        m.add("std_rigid", temporal_std(align_stack(*frames, *aff, zero, 1)).mean);
        m.add("std_parallax", temporal_std(align_stack(*frames, *aff, est, 1)).mean);
      }
      print(m);
    } else if (*pipe) {
      KeyValues kv;
      if (!pipe_cfg.empty()) kv = load_key_values(pipe_cfg);
      for (const auto& [k, v] : pipe_flags) {
        if (!v.empty()) kv[k] = v;
      }
      const PipelineResult r = run_pipeline(pipeline_config_from_key_values(kv));
      print(r.metrics);
    }
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
