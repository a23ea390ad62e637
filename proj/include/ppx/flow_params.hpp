#pragma once

#include <string>
#include <vector>

#include "ppx/grid.hpp"

namespace ppx {

/// Tunables of the robust variational flow energy and its solver.
struct FlowParams {
  double alpha = 10.0;         // smoothness weight
  double gamma = 5.0;          // gradient-constancy weight
  double epsilon = 0.001;      // robust penalty offset
  double scale_factor = 0.65;  // pyramid downscale ratio
  int min_size = 16;           // coarsest pyramid dimension
  int outer_iters = 10;        // warping iterations per level
  int inner_iters = 3;         // lagged-weight updates per warp
  int sor_iters = 30;          // relaxation sweeps per inner iteration
  double sor_omega = 1.8;
  int interp_order = 3;        // spline order of solver-internal warps

  void validate() const {
    if (!(alpha > 0.0)) throw ContractViolation("alpha must be positive");
    if (!(gamma >= 0.0)) throw ContractViolation("gamma must be non-negative");
    if (!(epsilon > 0.0)) throw ContractViolation("epsilon must be positive");
    if (!(sor_omega > 0.0 && sor_omega < 2.0)) throw ContractViolation("sor_omega must lie in (0, 2)");
    if (outer_iters < 1 || inner_iters < 1 || sor_iters < 1) {
      throw ContractViolation("iteration counts must be at least 1");
    }
    if (!(scale_factor >= 0.5 && scale_factor <= 0.95)) {
      throw ContractViolation("scale_factor must lie in [0.5, 0.95]");
    }
    if (min_size < 16) throw ContractViolation("min_size must be at least 16");
    if (interp_order != 1 && interp_order != 3 && interp_order != 5) {
      throw ContractViolation("interp_order must be 1, 3 or 5");
    }
  }
};

/// Energies recorded while solving. `finest_energies[0]` is the energy of
/// the flow entering the finest level, followed by one value per completed
/// outer iteration there.
struct SolverTrace {
  std::vector<double> finest_energies;
  int levels = 0;
  int accepted_steps = 0;
  int rejected_steps = 0;
};

}  // namespace ppx
