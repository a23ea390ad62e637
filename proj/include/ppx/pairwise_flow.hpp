#pragma once

#include <optional>

#include "ppx/flow_params.hpp"
#include "ppx/grid.hpp"
#include "ppx/variational.hpp"

namespace ppx {

/// Robust energy of `flow` between v0 and vi (vi pulled at x + flow(x)).
/// Pulls outside vi drop their data terms; smoothness covers every pixel.
template <typename T>
double pairwise_energy(const Image& v0, const Image& vi, const BasicFlowField<T>& flow, const FlowParams& p) {
  require_same_shape(v0, vi, "pairwise_energy");
  require_same_shape(v0, flow, "pairwise_energy");
  const std::vector<FlowTerm> terms{FlowTerm{&vi, nullptr, 1.0, AffineTransform::identity()}};
  return detail::variational_energy(v0, nullptr, AffineTransform::identity(), terms, p, flow_cast<double>(flow));
}

/// Coarse-to-fine robust flow from v0 to vi: v0(x) ≈ vi(x + flow(x)).
inline FlowField estimate_pairwise_flow(const Image& v0, const Image& vi, const FlowParams& p,
                                        const std::optional<FlowField>& init = std::nullopt,
                                        SolverTrace* trace = nullptr) {
  require_same_shape(v0, vi, "estimate_pairwise_flow");
  const std::vector<FlowTerm> terms{FlowTerm{&vi, nullptr, 1.0, AffineTransform::identity()}};
  std::optional<FlowFieldD> init_d;
  if (init) init_d = flow_cast<double>(*init);
  const FlowFieldD d = detail::solve_variational(v0, nullptr, AffineTransform::identity(), terms, p,
                                                 init_d ? &*init_d : nullptr, trace);
  return flow_cast<float>(d);
}

}  // namespace ppx
