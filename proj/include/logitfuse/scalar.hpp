#pragma once

#include <cmath>

namespace logitfuse {

// Shared by SL and the NLC so the cross-module reduction identities hold
// bitwise, not just approximately.
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_inv(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace logitfuse
