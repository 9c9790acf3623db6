#pragma once

#include <string>
#include <vector>

#include "logitfuse/calibration.hpp"
#include "logitfuse/manifest.hpp"
#include "logitfuse/nlc.hpp"
#include "logitfuse/types.hpp"

namespace logitfuse {

enum class CascadeCombiner { log_avg, calibrated_log_avg, nlc_per_prefix };

struct CascadeConfig {
  double threshold = 0.9;  // strict ">" exit test
  CascadeCombiner combiner = CascadeCombiner::log_avg;
  TemperatureVector temps;             // calibrated_log_avg: one per cascade position
  std::vector<NlcModel> prefix_models; // nlc_per_prefix: model k covers prefix k+1
};

struct CascadeTrace {
  std::vector<std::size_t> prefix_len;  // backbones evaluated per example
  std::vector<double> confidence;       // max softmax prob at exit
  std::vector<double> gflops;           // cumulative cost per example
  LabelVector predictions;
};

// Ascending GFLOPs, ties by name.
std::vector<std::size_t> order_backbones(const DatasetBundle& bundle);
// Explicit order; every name must exist.
std::vector<std::size_t> order_backbones(const DatasetBundle& bundle,
                                         const std::vector<std::string>& names);

// `stack` must already be in cascade order (see reorder_stack); features are
// only needed for the nlc_per_prefix combiner and may be empty otherwise.
CascadeTrace cascade_run(const LogitStack& stack, const std::vector<double>& gflops,
                         const CascadeConfig& cfg,
                         const std::vector<Matrix2D>& features = {});

double cascade_cost(const CascadeTrace& trace);

LogitStack reorder_stack(const LogitStack& stack, const std::vector<std::size_t>& order);

}  // namespace logitfuse
