#pragma once

#include <cmath>

namespace ppx {

/// Ψ(x) = sqrt(x² + ε²).
inline double robust_penalty(double x, double epsilon) { return std::sqrt(x * x + epsilon * epsilon); }

/// Ψ'(x) = x / Ψ(x).
inline double robust_penalty_derivative(double x, double epsilon) { return x / robust_penalty(x, epsilon); }

/// Ψ evaluated on a squared argument: sqrt(s + ε²).
inline double robust_penalty_sq(double s, double epsilon) { return std::sqrt(s + epsilon * epsilon); }

/// dΨ/ds for Ψ = sqrt(s + ε²), the lagged weight of the IRLS linearization.
inline double robust_weight_sq(double s, double epsilon) { return 0.5 / std::sqrt(s + epsilon * epsilon); }

}  // namespace ppx
