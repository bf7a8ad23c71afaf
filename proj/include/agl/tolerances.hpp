#pragma once

namespace agl::tol {

// Finite-difference verification.
inline constexpr double kFdStep = 1e-3;
inline constexpr double kGradRel = 1e-3;
inline constexpr double kGradRelLinear = 1e-6;
// Denominator floor of the relative error so vanishing gradients do not divide by ~0.
inline constexpr double kGradRelFloor = 1e-6;
inline constexpr int kFdMinCoords = 64;

inline constexpr double kProbSum = 1e-6;
inline constexpr double kUnitNorm = 1e-6;
inline constexpr double kLayerNormEps = 1e-5;

}  // namespace agl::tol
