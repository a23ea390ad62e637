// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if
// every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "ppx/fusion.hpp"
#include "ppx/io.hpp"
#include "ppx/multiframe_flow.hpp"
#include "ppx/pairwise_flow.hpp"
#include "ppx/parallel.hpp"
#include "ppx/pipeline.hpp"
#include "ppx/plane_parallax.hpp"
#include "ppx/synth.hpp"

using namespace ppx;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  failures += !o.pass;
  std::printf("CRITERION %2d %s  %s: %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
              seconds_since(t0));
  std::fflush(stdout);
}

fs::path work_dir() {
  const fs::path d = fs::temp_directory_path() / "ppx_acceptance";
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int run_cli(const std::string& args, const fs::path& out) {
  const std::string cmd = std::string(PPX_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double max_norm(const FlowFieldD& d) {
  double m = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) m = std::max(m, std::hypot(d.u[k], d.v[k]));
  return m;
}

template <typename A, typename B>
double max_diff(const BasicFlowField<A>& a, const BasicFlowField<B>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    m = std::max({m, std::abs(double(a.u[k]) - double(b.u[k])), std::abs(double(a.v[k]) - double(b.v[k]))});
  return m;
}

/// Flows x + f_i(x) = A_i x + i·d(x).
std::map<int, FlowField> model_flows(const AffinityMap& a, const FlowFieldD& d) {
  std::map<int, FlowField> flows;
  for (const auto& [i, t] : a) {
    if (i == 0) continue;
    FlowField f(d.width(), d.height());
    for (int y = 0; y < d.height(); ++y)
      for (int x = 0; x < d.width(); ++x) {
        const Point p = t(x, y);
        f.u(x, y) = static_cast<float>(p.x + i * d.u(x, y) - x);
        f.v(x, y) = static_cast<float>(p.y + i * d.v(x, y) - y);
      }
    flows.emplace(i, std::move(f));
  }
  return flows;
}

/// Largest displacement difference of two affinity sets over the image corners.
double max_affinity_gap(const AffinityMap& a, const AffinityMap& b, int w, int h) {
  double m = 0.0;
  for (const auto& [i, t] : a)
    for (const Point c : {Point{0, 0}, Point{w - 1.0, 0}, Point{0, h - 1.0}, Point{w - 1.0, h - 1.0}}) {
      const Point p = t(c), q = b.at(i)(c);
      m = std::max(m, std::hypot(p.x - q.x, p.y - q.y));
    }
  return m;
}

/// Energy traces of every solver call, for the descent criterion.
struct TraceLog {
  std::vector<std::pair<std::string, SolverTrace>> traces;

  SolverTrace& add(const std::string& name) { return traces.emplace_back(name, SolverTrace{}).second; }
};

TraceLog trace_log;

/// Shared front end of the processing chain: pairwise flows at α=10 and the
/// factorization. The multi-frame stage is then run at any α from it.
struct Chain {
  const SyntheticBurst* sb = nullptr;
  std::map<int, FlowField> flows;
  FactorizationResult factor;

  FlowField multiframe(double alpha, const std::string& tag) const {
    MultiFrameProblem mp;
    mp.frames = sb->burst;
    mp.affinities = factor.affinities;
    mp.params.alpha = alpha;
    mp.init = factor.disparity;
    return estimate_multiframe_flow(mp, &trace_log.add(tag + " multi-frame a=" + fmt("%g", alpha)));
  }
};

Chain front_end(const SyntheticBurst& sb, const std::string& tag) {
  Chain c;
  c.sb = &sb;
  FlowParams p;
  p.alpha = 10.0;
  FactorizationProblem pb;
  for (const auto& [i, f] : sb.burst.frames) {
    if (i == 0) continue;
    c.flows[i] = estimate_pairwise_flow(sb.burst.reference(), f, p, std::nullopt,
                                        &trace_log.add(tag + " pairwise " + std::to_string(i)));
  }
  pb.flows = c.flows;
  c.factor = solve_plane_parallax(pb);
  return c;
}

double stack_std(const SyntheticBurst& sb, const AffinityMap& a, const FlowField& d, int zoom = 1,
                 const Mask* region = nullptr) {
  return temporal_std(align_stack(sb.burst, a, d, zoom), region).mean;
}

constexpr int kSize = 128;

}  // namespace

int main() {
  const auto t_all = Clock::now();
  const fs::path work = work_dir();
  const Mask interior = interior_mask(kSize, kSize, 8);

  // 1. Factorization exactness ------------------------------------------------
  report(1, "factorization exactness", [&] {
    const SyntheticBurst sb = generate_burst(make_scene(SceneKind::kBump, kSize, kSize, 1));
    FactorizationProblem pb;
    pb.flows = model_flows(sb.truth.affinities, sb.truth.disparity);
    pb.subsample_step = 1;
    const auto t0 = Clock::now();
    const FactorizationResult r = solve_plane_parallax(pb);
    const double secs = seconds_since(t0);
    const double d_err = max_diff(r.disparity, sb.truth.disparity);
    const double a_err = max_affinity_gap(r.affinities, sb.truth.affinities, kSize, kSize);
    const bool ok = r.residual_rms < 1e-6 && d_err < 1e-4 && secs < 10.0;
    return Outcome{ok, fmt("residual_rms=%.2e (<1e-6) max|d-d*|=%.2e px (<1e-4) affinity gap=%.2e px "
                           "runtime=%.2fs (<10s, 128x128, N=9)",
                           r.residual_rms, d_err, a_err, secs)};
  });

  // 2. Gauge invariance ---------------------------------------------------------
  report(2, "gauge invariance", [&] {
    const SyntheticBurst sb = generate_burst(make_scene(SceneKind::kBump, kSize, kSize, 1));
    const AffineField g{0.021, -0.013, 0.011, 0.017, 2.7, -1.9};
    FlowFieldD dg = sb.truth.disparity;
    for (int y = 0; y < kSize; ++y)
      for (int x = 0; x < kSize; ++x) {
        dg.u(x, y) += g(x, y).x;
        dg.v(x, y) += g(x, y).y;
      }
    AffinityMap ag;
    for (const auto& [i, a] : sb.truth.affinities) ag[i] = add_scaled(a, g, -static_cast<double>(i));
    FactorizationProblem p1, p2;
    p1.subsample_step = p2.subsample_step = 4;
    p1.flows = model_flows(sb.truth.affinities, sb.truth.disparity);
    p2.flows = model_flows(ag, dg);
    const FactorizationResult r1 = solve_plane_parallax(p1);
    const FactorizationResult r2 = solve_plane_parallax(p2);
    const double dd = max_diff(r1.disparity, r2.disparity);
    const double da = max_affinity_gap(r1.affinities, r2.affinities, kSize, kSize);
    return Outcome{dd < 1e-4 && da < 1e-4, fmt("max|d change|=%.2e px, max affinity change=%.2e px (<1e-4)", dd, da)};
  });

  // 3. Pairwise flow sanity -----------------------------------------------------
  report(3, "pairwise flow sanity", [&] {
    const Image tex = make_texture(kSize, kSize, 77);
    const SplineImage s(tex, 5);
    std::string detail;
    bool ok = true;
    for (const Point t : {Point{1.5, -0.5}, Point{3.0, 0.0}, Point{-2.2, 2.0}, Point{0.3, 0.7}}) {
      Image moved(kSize, kSize);
      for (int y = 0; y < kSize; ++y)
        for (int x = 0; x < kSize; ++x) {
          const double px = std::clamp(x - t.x, 0.0, kSize - 1.0), py = std::clamp(y - t.y, 0.0, kSize - 1.0);
          moved(x, y) = static_cast<float>(s(px, py));
        }
      const FlowField f = estimate_pairwise_flow(tex, moved, FlowParams{});
      FlowField truth(kSize, kSize);
      for (std::size_t k = 0; k < truth.size(); ++k) {
        truth.u[k] = static_cast<float>(t.x);
        truth.v[k] = static_cast<float>(t.y);
      }
      const double e = flow_epe(f, truth, &interior);
      ok = ok && e < 0.2;
      detail += fmt("t=(%.1f,%.1f) epe=%.4f ", t.x, t.y, e);
    }
    return Outcome{ok, detail + "(<0.2 px)"};
  });

  // 4. Multi-frame benefit, through the command line ---------------------------
  report(4, "multi-frame benefit", [&] {
    const fs::path dir = work / "c4";
    if (run_cli("synth --scene bump --width 128 --n_frames 9 --noise_sigma 1 -o " + (dir / "scene").string(),
                work / "c4_synth.log") != 0)
      return Outcome{false, "synth failed: " + slurp(work / "c4_synth.log")};
    if (run_cli("pipeline --inputs '" + (dir / "scene" / "frame_*.pfm").string() + "' --output " +
                    (dir / "out").string() + " --mode sr --alpha 10 --sr false --dsm false",
                work / "c4_pipeline.log") != 0)
      return Outcome{false, "pipeline failed: " + slurp(work / "c4_pipeline.log")};
    std::string flows, indices;
    for (int i = -4; i <= 4; ++i) {
      if (i == 0) continue;
      char name[32];
      std::snprintf(name, sizeof name, "flow_%+03d.flo", i);
      flows += " " + (dir / "out" / name).string();
      indices += (indices.empty() ? "" : ",") + std::to_string(i);
    }
    if (run_cli("eval --estimate " + (dir / "out" / "disparity.flo").string() + " --truth " +
                    (dir / "scene" / "truth_disparity.flo").string() + " --affinities " +
                    (dir / "scene" / "truth_affinities.txt").string() + " --margin 8 --pairwise" + flows +
                    " --indices=" + indices,
                work / "c4_eval.txt") != 0)
      return Outcome{false, "eval failed: " + slurp(work / "c4_eval.txt")};
    const KeyValues m = parse_key_values(slurp(work / "c4_eval.txt"));
    const double epe = std::stod(m.at("epe"));
    const double best = std::stod(m.at("epe_pairwise_best"));
    return Outcome{epe < 0.15 && epe < best,
                   fmt("cmd_eval epe=%.4f (<0.15) best pairwise baseline-normalized epe=%.4f (must exceed epe)", epe,
                       best)};
  });

  // 5, 6, 8 and 9 share the processing chain on the parallax scenes.
  struct SceneRun {
    std::string name;
    SyntheticBurst sb;
    Chain chain;
    FlowField d10, d60;
  };
  std::vector<SceneRun> runs;
  for (const SceneKind k : {SceneKind::kBump, SceneKind::kRamp, SceneKind::kUrban}) {
    SceneRun r;
    r.name = scene_kind_name(k);
    r.sb = generate_burst(make_scene(k, kSize, kSize, 1));
    runs.push_back(std::move(r));
  }
  for (SceneRun& r : runs) {
    r.chain = front_end(r.sb, r.name);
    r.d10 = r.chain.multiframe(10.0, r.name);
    r.d60 = r.chain.multiframe(60.0, r.name);
  }

  // 5. Temporal-std ordering -------------------------------------------------
  report(5, "temporal-std ordering", [&] {
    bool ok = true;
    std::string detail;
    const FlowField zero(kSize, kSize);
    for (const SceneRun& r : runs) {
      const AffinityMap& a = r.chain.factor.affinities;
      const double s10 = stack_std(r.sb, a, r.d10);
      const double s60 = stack_std(r.sb, a, r.d60);
      const double rigid = stack_std(r.sb, a, zero);
      const double maxd = max_norm(r.sb.truth.disparity);
      const double gap = 1.0 - s10 / rigid;
      const bool scene_ok = s10 <= s60 && s60 < rigid && (maxd <= 0.5 || gap >= 0.05);
      ok = ok && scene_ok;
      detail += fmt("%s a10=%.4f a60=%.4f rigid=%.4f gap=%.1f%% max|d|=%.2f; ", r.name.c_str(), s10, s60, rigid,
                    100.0 * gap, maxd);
    }
    return Outcome{ok, detail + "need a10<=a60<rigid, gap>=5% when max|d|>0.5"};
  });

  // 6. SR benefit ---------------------------------------------------------------
  report(6, "super-resolution benefit", [&] {
    const auto pattern = checkerboard_pattern(2.5);
    const int n = 64;
    Burst b;
    AffinityMap a;
    int next = 1;
    for (const Point t : {Point{0, 0}, Point{0.5, 0}, Point{0, 0.5}, Point{0.5, 0.5}}) {
      const int i = (t.x == 0 && t.y == 0) ? 0 : next++;
      Image f(n, n);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) f(x, y) = static_cast<float>(pattern(x - t.x, y - t.y));
      b.frames.emplace(i, std::move(f));
      a[i] = AffineTransform::translation(t.x, t.y);
    }
    Image truth(2 * n, 2 * n);
    for (int y = 0; y < 2 * n; ++y)
      for (int x = 0; x < 2 * n; ++x) truth(x, y) = static_cast<float>(pattern(x / 2.0, y / 2.0));
    const Mask hr_in = interior_mask(2 * n, 2 * n, 8);
    const double ncc = normalized_cross_correlation(super_resolve(b, a, FlowField(n, n), 2), truth, &hr_in);
    const double ncc_single = normalized_cross_correlation(upsample(b.reference(), 2), truth, &hr_in);

    const SceneRun& bump = runs.front();
    Mask region(2 * kSize, 2 * kSize, 0);
    for (int y = 0; y < 2 * kSize; ++y)
      for (int x = 0; x < 2 * kSize; ++x) region(x, y) = bump.sb.truth.elevation(x / 2, y / 2) > 0.3;
    const AffinityMap& ba = bump.chain.factor.affinities;
    const double with_d = stack_std(bump.sb, ba, bump.d10, 2, &region);
    const double rigid = stack_std(bump.sb, ba, FlowField(kSize, kSize), 2, &region);
    const double ratio = with_d / rigid;
    return Outcome{ncc > 0.95 && ratio <= 0.8,
                   fmt("checkerboard NCC=%.4f (>0.95; single-frame upsampling %.4f) bump-region std ratio=%.3f (<=0.8)",
                       ncc, ncc_single, ratio)};
  });

  // 7. Moving object ------------------------------------------------------------
  report(7, "moving-object capture", [&] {
    SceneSpec spec = make_scene(SceneKind::kBump, kSize, kSize, 1);
    const Mover mover{20, 80, 16, 16, 0.6, -0.4};
    spec.movers.push_back(mover);
    const SyntheticBurst sb = generate_burst(spec);
    const Chain c = front_end(sb, "mover");
    const FlowField d = c.multiframe(10.0, "mover");
    Mask core(kSize, kSize, 0);
    double vx = 0, vy = 0, n = 0;
    for (int y = mover.y0 + 3; y < mover.y0 + mover.height - 3; ++y)
      for (int x = mover.x0 + 3; x < mover.x0 + mover.width - 3; ++x) {
        core(x, y) = 1;
        // estimate minus the static background disparity
        vx += d.u(x, y) - (sb.truth.disparity.u(x, y) - mover.vx);
        vy += d.v(x, y) - (sb.truth.disparity.v(x, y) - mover.vy);
        ++n;
      }
    vx /= n;
    vy /= n;
    const double verr = std::hypot(vx - mover.vx, vy - mover.vy);
    const double ghost = stack_std(sb, c.factor.affinities, d, 1, &core);
    const double ghost_rigid = stack_std(sb, c.factor.affinities, FlowField(kSize, kSize), 1, &core);
    const double drop = 1.0 - ghost / ghost_rigid;
    return Outcome{verr < 0.2 && drop >= 0.3,
                   fmt("velocity (%.3f,%.3f) vs (%.2f,%.2f), error %.3f px/frame (<0.2); ghost std %.3f vs rigid %.3f, "
                       "drop %.1f%% (>=30%%)",
                       vx, vy, mover.vx, mover.vy, verr, ghost, ghost_rigid, 100.0 * drop)};
  });

  // 8. DSM proportionality ------------------------------------------------------
  report(8, "surface-model proportionality", [&] {
    const SceneRun& bump = runs.front();
    const SurfaceModel m1 = disparity_to_dsm(bump.d60, Point{1, 0});
    const Grid<double> h1 = remove_plane(m1.heights, &interior);
    const double r = pearson(h1, remove_plane(bump.sb.truth.elevation, &interior), &interior);

    SceneSpec spec = make_scene(SceneKind::kBump, kSize, kSize, 1);
    for (double& e : spec.elevation.samples()) e *= 2.0;
    const SyntheticBurst sb2 = generate_burst(spec);
    const FlowField d2 = front_end(sb2, "bump x2").multiframe(60.0, "bump x2");
    const Grid<double> h2 = remove_plane(disparity_to_dsm(d2, Point{1, 0}).heights, &interior);
    double num = 0, den = 0;
    for (std::size_t k = 0; k < h1.size(); ++k) {
      if (!interior[k]) continue;
      num += h1[k] * h2[k];
      den += h1[k] * h1[k];
    }
    const double ratio = num / den;
    return Outcome{r > 0.9 && std::abs(ratio - 2.0) <= 0.1,
                   fmt("Pearson r=%.4f (>0.9) height ratio after doubling=%.4f (2 within 5%%)", r, ratio)};
  });

  // 9. Energy descent -----------------------------------------------------------
  report(9, "energy descent", [&] {
    std::size_t checked = 0;
    double worst = 0.0;
    std::string culprit;
    for (const auto& [name, t] : trace_log.traces) {
      for (std::size_t k = 1; k < t.finest_energies.size(); ++k) {
        const double rise = (t.finest_energies[k] - t.finest_energies[k - 1]) / std::abs(t.finest_energies[k - 1]);
        if (rise > worst) {
          worst = rise;
          culprit = name;
        }
      }
      checked += t.finest_energies.size() > 1;
    }
    const bool ok = checked > 0 && worst <= 1e-3;
    return Outcome{ok, fmt("%zu solver runs, worst relative rise %.2e (<=1e-3)%s", checked, worst,
                           culprit.empty() ? "" : (" in " + culprit).c_str())};
  });

  // 10. Determinism -------------------------------------------------------------
  report(10, "determinism", [&] {
    const fs::path dir = work / "c10";
    SceneSpec spec = make_scene(SceneKind::kUrban, 96, 96, 4);
    spec.n_frames = 7;
    const SyntheticBurst sb = generate_burst(spec);
    fs::create_directories(dir / "frames");
    int pos = 0;
    for (const auto& [i, img] : sb.burst.frames) save_pfm(img, dir / "frames" / fmt("frame_%02d.pfm", pos++));
    const int default_threads = thread_count();
    const auto run = [&](int threads, const std::string& name) {
      set_thread_count(threads);
      KeyValues kv{{"inputs", (dir / "frames" / "frame_*.pfm").string()}, {"output", (dir / name).string()}};
      run_pipeline(pipeline_config_from_key_values(kv));
    };
    run(8, "a");
    run(8, "b");
    run(1, "c");
    set_thread_count(default_threads);
    std::size_t files = 0;
    std::string mismatch;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
      const std::string name = e.path().filename().string();
      const std::string ref = slurp(e.path());
      ++files;
      if (slurp(dir / "b" / name) != ref) mismatch += " rerun:" + name;
      if (slurp(dir / "c" / name) != ref) mismatch += " threads:" + name;
    }
    return Outcome{files > 0 && mismatch.empty(),
                   fmt("%zu output files compared across rerun and 1 vs 8 threads%s", files,
                       mismatch.empty() ? ", all byte-identical" : (";" + mismatch).c_str())};
  });

  const double total = seconds_since(t_all);
  std::printf("acceptance: %d of 10 criteria failed, %.1fs total\n", failures, total);
  return failures == 0 ? 0 : 1;
}
