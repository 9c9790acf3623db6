#pragma once

#include <vector>

#include "logitfuse/nlc.hpp"
#include "logitfuse/types.hpp"

// Plain single-threaded re-implementations of the hot kernels. The parallel
// versions schedule whole rows per iteration, so these must agree bit-for-bit
// on row-wise ops; reductions (mean_nll) agree to accumulation-order rounding.
// Kept for parity tests and the bench_kernels comparison target.
namespace logitfuse::serial {

LabelVector top1(const Matrix2D& logits);

Matrix2D log_avg(const LogitStack& stack);

Matrix2D combine_fixed(const LogitStack& stack, const std::vector<double>& temps);

Matrix2D nlc_forward(const NlcModel& model, const Matrix2D& features);

double mean_nll(const Matrix2D& logits, const LabelVector& labels, double t);

}  // namespace logitfuse::serial
