#include <gtest/gtest.h>

#include <cmath>

#include "ppx/fusion.hpp"
#include "ppx/multiframe_flow.hpp"
#include "ppx/pairwise_flow.hpp"
#include "ppx/robust.hpp"
#include "ppx/synth.hpp"
#include "test_support.hpp"

using namespace ppx;
using namespace ppx::testing;

namespace {

double mean_norm(const FlowField& f) {
  double s = 0;
  for (std::size_t i = 0; i < f.size(); ++i) s += std::hypot(f.u[i], f.v[i]);
  return s / static_cast<double>(f.size());
}

double max_norm(const FlowField& f) {
  double m = 0;
  for (std::size_t i = 0; i < f.size(); ++i) m = std::max(m, std::hypot(double(f.u[i]), double(f.v[i])));
  return m;
}

void expect_descent(const SolverTrace& t) {
  ASSERT_FALSE(t.finest_energies.empty());
  for (std::size_t k = 1; k < t.finest_energies.size(); ++k) {
    EXPECT_LE(t.finest_energies[k], t.finest_energies[k - 1] * 1.001) << "outer iteration " << k;
  }
}

}  // namespace

TEST(RobustPenalty, Values) {
  EXPECT_DOUBLE_EQ(robust_penalty(0.0, 0.001), 0.001);
  EXPECT_DOUBLE_EQ(robust_penalty(3.0, 4.0), 5.0);
  for (double x : {0.1, 1.0, 7.5}) EXPECT_DOUBLE_EQ(robust_penalty(-x, 0.01), robust_penalty(x, 0.01));
}

TEST(RobustPenalty, DerivativeMatchesFiniteDifference) {
  const double eps = 0.5;
  for (double x = -10.0; x <= 10.0; x += 0.37) {
    const double h = 1e-6;
    const double num = (robust_penalty(x + h, eps) - robust_penalty(x - h, eps)) / (2 * h);
    const double ana = robust_penalty_derivative(x, eps);
    EXPECT_NEAR(num, ana, 1e-6 * std::max(1.0, std::abs(ana)));
  }
}

TEST(FlowParams, Validation) {
  FlowParams p;
  EXPECT_NO_THROW(p.validate());
  p.alpha = 0;
  EXPECT_THROW(p.validate(), ContractViolation);
  p = FlowParams{};
  p.sor_omega = 2.0;
  EXPECT_THROW(p.validate(), ContractViolation);
  p = FlowParams{};
  p.gamma = -1;
  EXPECT_THROW(p.validate(), ContractViolation);
  p = FlowParams{};
  p.sor_iters = 0;
  EXPECT_THROW(p.validate(), ContractViolation);
}

TEST(PairwiseEnergy, ZeroResidualValue) {
  const Image img = textured(24, 20);
  const FlowParams p;
  const double n = 24.0 * 20.0;
  const double expected = (1 + p.gamma) * p.epsilon * n + p.alpha * p.epsilon * n;
  EXPECT_NEAR(pairwise_energy(img, img, FlowField(24, 20), p), expected, 1e-9 * expected);
}

TEST(PairwiseEnergy, LowerBoundAndShapeCheck) {
  const Image a = textured(24, 20, 1), b = textured(24, 20, 2);
  const FlowParams p;
  EXPECT_GE(pairwise_energy(a, b, constant_flow(24, 20, 0.3f, -0.2f), p), p.alpha * p.epsilon * 480);
  EXPECT_THROW(pairwise_energy(a, Image(10, 10), FlowField(24, 20), p), ContractViolation);
}

TEST(PairwiseFlow, IdenticalFramesGiveZeroFlow) {
  const Image img = textured(64, 64);
  const FlowField f = estimate_pairwise_flow(img, img, FlowParams{});
  EXPECT_LT(mean_norm(f), 1e-2);
  EXPECT_LT(max_norm(f), 0.05);
}

class PairwiseShift : public ::testing::TestWithParam<std::pair<double, double>> {};

TEST_P(PairwiseShift, RecoversTranslation) {
  const auto [tx, ty] = GetParam();
  const Image v0 = shifted_pattern(96, 96, 0, 0);
  // v1(x + t) = v0(x): v1 is the pattern moved by t
  const Image v1 = shifted_pattern(96, 96, tx, ty);
  SolverTrace trace;
  const FlowField f = estimate_pairwise_flow(v0, v1, FlowParams{}, std::nullopt, &trace);
  const Mask in = interior_mask(96, 96, 10);
  const FlowField truth = constant_flow(96, 96, static_cast<float>(tx), static_cast<float>(ty));
  EXPECT_LT(flow_epe(f, truth, &in), 0.2);
  expect_descent(trace);
}

INSTANTIATE_TEST_SUITE_P(Shifts, PairwiseShift,
                         ::testing::Values(std::pair{2.0, 0.0}, std::pair{-1.5, 0.75}, std::pair{0.0, 3.0},
                                           std::pair{2.5, -1.0}));

TEST(PairwiseFlow, TexturedShiftWithNoise) {
  const Image tex = textured(128, 128, 9);
  const SplineImage s(tex, 5);
  const Image v1 = sampled(128, 128, [&](int x, int y) { return s(std::clamp(x - 2.0, 0.0, 127.0), y); });
  const FlowField f = estimate_pairwise_flow(tex, v1, FlowParams{});
  const Mask in = interior_mask(128, 128, 12);
  EXPECT_LT(flow_epe(f, constant_flow(128, 128, 2.0f, 0.0f), &in), 0.2);
}

TEST(PairwiseFlow, SyntheticParallaxPair) {
  const SceneSpec spec = make_scene(SceneKind::kBump, 96, 96, 4);
  const SyntheticBurst sb = generate_burst(spec);
  const FlowField f = estimate_pairwise_flow(sb.burst.reference(), sb.burst.frame(2), FlowParams{});
  const FlowField truth = flow_cast<float>(sb.truth.frame_flow(2));
  const Mask in = interior_mask(96, 96, 10);
  EXPECT_LT(flow_epe(f, truth, &in), 0.3);
}

TEST(PairwiseFlow, PerturbingConvergedFlowRaisesEnergy) {
  const Image v0 = shifted_pattern(32, 32, 0, 0);
  const Image v1 = shifted_pattern(32, 32, 0.6, -0.3);
  const FlowParams p;
  const FlowField f = estimate_pairwise_flow(v0, v1, p);
  const double e0 = pairwise_energy(v0, v1, f, p);
  FlowField g = f;
  for (std::size_t i = 0; i < g.size(); ++i) g.u[i] += 0.1f;
  EXPECT_GT(pairwise_energy(v0, v1, g, p), e0);
}

TEST(PairwiseFlow, InitIsUsed) {
  const Image v0 = shifted_pattern(64, 64, 0, 0);
  const Image v1 = shifted_pattern(64, 64, 1.0, 0.5);
  FlowParams p;
  p.outer_iters = 1;
  p.min_size = 64;  // single level: the result depends on where it starts
  const FlowField near = estimate_pairwise_flow(v0, v1, p, constant_flow(64, 64, 1.0f, 0.5f));
  const Mask in = interior_mask(64, 64, 8);
  EXPECT_LT(flow_epe(near, constant_flow(64, 64, 1.0f, 0.5f), &in), 0.05);
  EXPECT_THROW(estimate_pairwise_flow(v0, v1, p, FlowField(8, 8)), ContractViolation);
}

// ---------------------------------------------------------------------------

TEST(MultiFrameEnergy, IdenticalFramesZeroResidual) {
  const Image img = textured(24, 20);
  MultiFrameProblem pb;
  for (int i = -2; i <= 2; ++i) pb.frames.frames.emplace(i, img);
  const FlowParams& p = pb.params;
  const double n = 480.0;
  const double expected = (1 + p.gamma) * p.epsilon * n + p.alpha * p.epsilon * n;
  EXPECT_NEAR(multiframe_energy(pb, FlowField(24, 20)), expected, 1e-9 * expected);
}

TEST(MultiFrameEnergy, DuplicatedTermsLeaveMeanUnchanged) {
  const SyntheticBurst sb = generate_burst(make_scene(SceneKind::kBump, 48, 48, 2));
  MultiFrameProblem pb;
  pb.frames = sb.burst;
  pb.affinities = sb.truth.affinities;
  const FlowFieldD d = sb.truth.disparity;
  std::vector<FlowTerm> terms = pb.terms();
  const double e1 = detail::variational_energy(pb.frames.reference(), nullptr, AffineTransform{}, terms, pb.params, d);
  std::vector<FlowTerm> doubled = terms;
  doubled.insert(doubled.end(), terms.begin(), terms.end());
  const double e2 = detail::variational_energy(pb.frames.reference(), nullptr, AffineTransform{}, doubled, pb.params, d);
  EXPECT_NEAR(e2, e1, 1e-6 * e1);
}

TEST(MultiFrameEnergy, TruthBeatsZeroOnBump) {
  const SyntheticBurst sb = generate_burst(make_scene(SceneKind::kBump, 96, 96, 3));
  MultiFrameProblem pb;
  pb.frames = sb.burst;
  pb.affinities = sb.truth.affinities;
  const double at_truth = multiframe_energy(pb, sb.truth.disparity);
  const double at_zero = multiframe_energy(pb, FlowField(96, 96));
  EXPECT_LE(at_truth, 0.95 * at_zero);
}

TEST(MultiFrameFlow, IdenticalFramesGiveZero) {
  const Image img = textured(64, 64);
  MultiFrameProblem pb;
  for (int i = -2; i <= 2; ++i) pb.frames.frames.emplace(i, img);
  EXPECT_LT(max_norm(estimate_multiframe_flow(pb)), 0.05);
}

TEST(MultiFrameFlow, TwoFramesMatchPairwise) {
  const Image v0 = shifted_pattern(80, 80, 0, 0);
  const Image v1 = shifted_pattern(80, 80, 1.2, -0.4);
  MultiFrameProblem pb;
  pb.frames.frames.emplace(0, v0);
  pb.frames.frames.emplace(1, v1);
  const FlowField mf = estimate_multiframe_flow(pb);
  const FlowField pw = estimate_pairwise_flow(v0, v1, pb.params);
  const Mask in = interior_mask(80, 80, 8);
  EXPECT_LT(flow_epe(mf, pw, &in), 0.1);
}

TEST(MultiFrameFlow, BaselineScalingIsNormalized) {
  SceneSpec spec = make_scene(SceneKind::kBump, 96, 96, 5);
  spec.noise_sigma = 0.0;
  spec.affine_jitter = 0.0;
  const SyntheticBurst sb = generate_burst(spec);
  const Mask in = interior_mask(96, 96, 10);
  FlowField d[2];
  for (int k = 1; k <= 2; ++k) {
    MultiFrameProblem pb;
    for (int i : {-k, 0, k}) pb.frames.frames.emplace(i, sb.burst.frame(i));
    pb.affinities = sb.truth.affinities;
    d[k - 1] = estimate_multiframe_flow(pb);
  }
  EXPECT_LT(flow_epe(d[0], d[1], &in), 0.05);
}

TEST(MultiFrameFlow, BumpBurstAccuracyAndDescent) {
  const SyntheticBurst sb = generate_burst(make_scene(SceneKind::kBump, 96, 96, 6));
  MultiFrameProblem pb;
  pb.frames = sb.burst;
  pb.affinities = sb.truth.affinities;
  SolverTrace trace;
  const FlowField d = estimate_multiframe_flow(pb, &trace);
  const Mask in = interior_mask(96, 96, 10);
  EXPECT_LT(flow_epe(d, sb.truth.disparity, &in), 0.15);
  expect_descent(trace);
}

TEST(MultiFrameFlow, MoverOnFlatScene) {
  SceneSpec spec = make_scene(SceneKind::kFlat, 96, 96, 7);
  spec.movers.push_back(Mover{30, 36, 20, 18, 0.5, -0.3});
  const SyntheticBurst sb = generate_burst(spec);
  MultiFrameProblem pb;
  pb.frames = sb.burst;
  pb.affinities = sb.truth.raw_affinities;  // the raw model keeps the background at d = 0
  const FlowField d = estimate_multiframe_flow(pb);
  double su = 0, sv = 0, n = 0;
  for (int y = 40; y < 50; ++y)
    for (int x = 34; x < 46; ++x) {
      su += d.u(x, y);
      sv += d.v(x, y);
      ++n;
    }
  EXPECT_NEAR(su / n, 0.5, 0.2);
  EXPECT_NEAR(sv / n, -0.3, 0.2);
}

TEST(MultiFrameFlow, HigherAlphaGivesLowerTotalVariation) {
  const SyntheticBurst sb = generate_burst(make_scene(SceneKind::kUrban, 96, 96, 8));
  MultiFrameProblem pb;
  pb.frames = sb.burst;
  pb.affinities = sb.truth.affinities;
  pb.params.alpha = 10;
  const FlowField d10 = estimate_multiframe_flow(pb);
  pb.params.alpha = 60;
  const FlowField d60 = estimate_multiframe_flow(pb);
  EXPECT_LE(total_variation(d60), total_variation(d10));
}

TEST(MultiFrameFlow, ContractChecks) {
  MultiFrameProblem pb;
  pb.frames.frames.emplace(0, textured(32, 32));
  EXPECT_THROW(pb.validate(), ContractViolation);
  pb.frames.frames.emplace(1, textured(32, 32, 4));
  pb.frames.frames.emplace(2, textured(32, 32, 5));
  pb.affinities[1] = AffineTransform{};
  EXPECT_THROW(pb.validate(), ContractViolation);  // frame 2 has no affinity
  pb.affinities[2] = AffineTransform{};
  pb.init = FlowField(8, 8);
  EXPECT_THROW(pb.validate(), ContractViolation);
}
