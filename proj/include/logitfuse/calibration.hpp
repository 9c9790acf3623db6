#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "logitfuse/types.hpp"

namespace logitfuse {

inline constexpr double kTempMin = 0.05;
inline constexpr double kTempMax = 50.0;

struct TemperatureVector {
  std::vector<std::string> names;  // backbone names, may be empty for anonymous fits
  std::vector<double> temps;
  std::vector<double> nll;  // diagnostic: final NLL per backbone (when fitted)
  std::string split;        // diagnostic: split the fit ran on
};

// Mean NLL of softmax(z/t, y); the reduction order is fixed, so the value is
// bit-identical across thread counts.
double mean_nll(const Matrix2D& logits, const LabelVector& labels, double t);

// argmin over t in [0.05, 50]: 64-point log grid, then golden-section
// refinement to |dt| < 1e-4; t=1 is always a candidate so NLL(t) <= NLL(1).
double fit_temperature(const Matrix2D& logits, const LabelVector& labels,
                       double* final_nll = nullptr);

// One independent fit per backbone (parallelizable; each fit is pure).
TemperatureVector fit_temperatures(const LogitStack& stack);

Matrix2D apply_temperature(const Matrix2D& logits, double t);

// Mean over b of z^b / t_b.
Matrix2D calibrated_log_avg(const LogitStack& stack, const TemperatureVector& temps);

// confidence_select on the per-backbone temperature-scaled stack.
LabelVector calibrated_confidence(const LogitStack& stack, const TemperatureVector& temps);

// calibrate-subcommand schema: {"temps": {name: t}, "nll": {name: v}, "split": s}
void save_temperatures(const TemperatureVector& temps, const std::filesystem::path& path);
TemperatureVector load_temperatures(const std::filesystem::path& path);

// Reorders a loaded TemperatureVector to match `names` (e.g. stack order);
// UnknownBackboneName if any name has no fitted temperature.
TemperatureVector align_temperatures(const TemperatureVector& temps,
                                     const std::vector<std::string>& names);

}  // namespace logitfuse
