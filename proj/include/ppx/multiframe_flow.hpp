#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ppx/affine.hpp"
#include "ppx/burst.hpp"
#include "ppx/flow_params.hpp"
#include "ppx/variational.hpp"

namespace ppx {

/// Joint estimation of one disparity field d from a burst under the
/// constant-motion model: frame i is pulled at A_i x + i·d(x).
struct MultiFrameProblem {
  Burst frames;
  /// Empty means every frame is already on the common plane.
  AffinityMap affinities;
  FlowParams params;
  std::optional<FlowField> init;

  void validate() const {
    frames.validate();
    if (frames.size() < 2) throw ContractViolation("multi-frame flow needs the reference and at least one frame");
    if (!affinities.empty()) {
      for (int i : frames.indices()) {
        if (i != 0 && !affinities.count(i)) throw ContractViolation("no affinity for frame " + std::to_string(i));
      }
    }
    for (const auto& [i, a] : affinities) a.validate();
    if (init) require_same_shape(frames.reference(), *init, "multi-frame initial flow");
    params.validate();
  }

  AffineTransform affinity(int i) const {
    const auto it = affinities.find(i);
    return it == affinities.end() ? AffineTransform::identity() : it->second;
  }

  std::vector<FlowTerm> terms() const {
    std::vector<FlowTerm> out;
    for (const auto& [i, img] : frames.frames) {
      if (i == 0) continue;
      out.push_back(FlowTerm{&img, frames.mask(i), static_cast<double>(i), affinity(i)});
    }
    return out;
  }
};

/// Multi-frame energy: per-pixel data terms averaged over the frames whose
/// pull is valid there, plus one shared smoothness term.
template <typename T>
double multiframe_energy(const MultiFrameProblem& pb, const BasicFlowField<T>& d) {
  pb.validate();
  require_same_shape(pb.frames.reference(), d, "multiframe_energy");
  return detail::variational_energy(pb.frames.reference(), pb.frames.mask(0), pb.affinity(0), pb.terms(), pb.params,
                                    flow_cast<double>(d));
}

inline FlowField estimate_multiframe_flow(const MultiFrameProblem& pb, SolverTrace* trace = nullptr) {
  pb.validate();
  std::optional<FlowFieldD> init;
  if (pb.init) init = flow_cast<double>(*pb.init);
  const FlowFieldD d = detail::solve_variational(pb.frames.reference(), pb.frames.mask(0), pb.affinity(0), pb.terms(),
                                                 pb.params, init ? &*init : nullptr, trace);
  return flow_cast<float>(d);
}

}  // namespace ppx
