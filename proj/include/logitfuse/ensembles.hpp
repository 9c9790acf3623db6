#pragma once

#include <vector>

#include "logitfuse/types.hpp"

namespace logitfuse {

// Max-subtracted, so constant row shifts cancel exactly.
std::vector<double> softmax(const double* row, std::size_t n, double t);
std::vector<double> softmax(const std::vector<double>& row, double t = 1.0);

// -sum p ln p with 0 ln 0 := 0; input must sum to 1 within 1e-6.
double shannon_entropy(const std::vector<double>& p);

void check_stack(const LogitStack& stack);

// Elementwise mean of the B logit blocks.
Matrix2D log_avg(const LogitStack& stack);

// Majority vote over top-1 predictions; ties go to the tied class whose
// voting backbones carry the highest max softmax(t=1) probability, then to
// the lowest class index.
LabelVector vote_top1(const LogitStack& stack);

// Borda-style (3,2,1) weights over each backbone's top-3; needs C >= 3.
LabelVector vote_top3(const LogitStack& stack);

// Per example, emit the prediction of the lowest-entropy backbone.
LabelVector confidence_select(const LogitStack& stack);

// Optional exporter-scale repair: per-backbone global z-scoring (off by
// default everywhere; exposed behind a CLI flag).
LogitStack zscore_stack(const LogitStack& stack);

}  // namespace logitfuse
