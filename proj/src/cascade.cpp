#include "logitfuse/cascade.hpp"

#include <algorithm>
#include <cmath>

#include "logitfuse/ensembles.hpp"
#include "logitfuse/learned.hpp"
#include "logitfuse/parallel.hpp"

namespace logitfuse {

std::vector<std::size_t> order_backbones(const DatasetBundle& bundle) {
  std::vector<std::size_t> order(bundle.backbones.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = bundle.backbones[a];
    const auto& y = bundle.backbones[b];
    return x.gflops != y.gflops ? x.gflops < y.gflops : x.name < y.name;
  });
  return order;
}

std::vector<std::size_t> order_backbones(const DatasetBundle& bundle,
                                         const std::vector<std::string>& names) {
  if (names.size() != bundle.backbones.size())
    throw Error(ErrorKind::unknown_backbone_name,
                "explicit order must list every backbone exactly once");
  std::vector<std::size_t> order;
  std::vector<bool> used(bundle.backbones.size(), false);
  for (const auto& name : names) {
    const std::size_t i = bundle.backbone_index(name);  // UnknownBackboneName
    if (used[i])
      throw Error(ErrorKind::unknown_backbone_name,
                  "backbone \"" + name + "\" listed more than once");
    used[i] = true;
    order.push_back(i);
  }
  return order;
}

LogitStack reorder_stack(const LogitStack& stack, const std::vector<std::size_t>& order) {
  LogitStack out;
  out.labels = stack.labels;
  for (const std::size_t i : order) {
    out.names.push_back(stack.names[i]);
    out.logits.push_back(stack.logits[i]);
  }
  return out;
}

namespace {

LogitStack prefix_stack(const LogitStack& stack, std::size_t len) {
  LogitStack out;
  out.labels = stack.labels;
  out.names.assign(stack.names.begin(), stack.names.begin() + len);
  out.logits.assign(stack.logits.begin(), stack.logits.begin() + len);
  return out;
}

}  // namespace

CascadeTrace cascade_run(const LogitStack& stack, const std::vector<double>& gflops,
                         const CascadeConfig& cfg, const std::vector<Matrix2D>& features) {
  check_stack(stack);
  const std::size_t b = stack.logits.size();
  const std::size_t rows = stack.logits[0].rows;
  const std::size_t cols = stack.logits[0].cols;
  if (gflops.size() != b)
    throw Error(ErrorKind::length_mismatch, "gflops list does not match backbone count");
  if (cfg.threshold < 0.0 || cfg.threshold > 1.0)
    throw Error(ErrorKind::schema_violation, "cascade threshold must lie in [0, 1]");

  // every prefix's combined logits, produced by the same combiner code paths
  // used standalone, so the threshold-limit equivalences hold bitwise
  std::vector<Matrix2D> combined;
  combined.reserve(b);
  for (std::size_t len = 1; len <= b; ++len) {
    const LogitStack prefix = prefix_stack(stack, len);
    switch (cfg.combiner) {
      case CascadeCombiner::log_avg:
        combined.push_back(log_avg(prefix));
        break;
      case CascadeCombiner::calibrated_log_avg: {
        if (cfg.temps.temps.size() != b)
          throw Error(ErrorKind::missing_combiner_state,
                      "calibrated cascade needs one fitted temperature per backbone");
        TemperatureVector temps;
        temps.names.assign(cfg.temps.names.begin(),
                           cfg.temps.names.begin() +
                               std::min(cfg.temps.names.size(), len));
        temps.temps.assign(cfg.temps.temps.begin(), cfg.temps.temps.begin() + len);
        combined.push_back(calibrated_log_avg(prefix, temps));
        break;
      }
      case CascadeCombiner::nlc_per_prefix: {
        if (cfg.prefix_models.size() != b)
          throw Error(ErrorKind::missing_combiner_state,
                      "nlc cascade needs one trained model per prefix");
        if (features.size() != b)
          throw Error(ErrorKind::missing_features,
                      "nlc cascade needs per-backbone features in cascade order");
        const NlcModel& model = cfg.prefix_models[len - 1];
        if (model.output_dim != len)
          throw Error(ErrorKind::missing_combiner_state,
                      "prefix model " + std::to_string(len) + " covers " +
                          std::to_string(model.output_dim) + " backbones");
        const std::vector<Matrix2D> prefix_features(features.begin(), features.begin() + len);
        combined.push_back(nlc_combine(prefix, nlc_forward(model, concat_features(prefix_features))));
        break;
      }
    }
  }

  CascadeTrace trace;
  trace.prefix_len.resize(rows);
  trace.confidence.resize(rows);
  trace.gflops.resize(rows);
  trace.predictions.resize(rows);

  std::vector<double> cumulative(b);
  double running = 0.0;
  for (std::size_t k = 0; k < b; ++k) {
    running += gflops[k];
    cumulative[k] = running;
  }

  parallel_for(rows, [&](std::size_t r) {
    for (std::size_t k = 0; k < b; ++k) {
      const double* row = combined[k].row(r);
      const std::vector<double> p = softmax(row, cols, 1.0);
      std::size_t best = 0;
      for (std::size_t c = 1; c < cols; ++c)
        if (p[c] > p[best]) best = c;
      // exit rule is strictly "bigger than" the threshold, never >=
      if (p[best] > cfg.threshold || k + 1 == b) {
        trace.prefix_len[r] = k + 1;
        trace.confidence[r] = p[best];
        trace.gflops[r] = cumulative[k];
        const double* z = combined[k].row(r);
        std::size_t arg = 0;
        for (std::size_t c = 1; c < cols; ++c)
          if (z[c] > z[arg]) arg = c;
        trace.predictions[r] = static_cast<std::int64_t>(arg);
        return;
      }
    }
  });
  return trace;
}

double cascade_cost(const CascadeTrace& trace) {
  if (trace.gflops.empty()) throw Error(ErrorKind::empty_split, "empty cascade trace");
  double total = 0.0;
  for (const double g : trace.gflops) total += g;
  return total / static_cast<double>(trace.gflops.size());
}

}  // namespace logitfuse
