#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "logitfuse/calibration.hpp"
#include "logitfuse/types.hpp"

namespace logitfuse {

struct GacConfig {
  std::size_t population = 64;
  std::size_t generations = 200;
  std::size_t tournament_size = 3;
  double mutation_sigma = 0.1;  // in log-temperature space
  std::size_t elitism = 2;
  std::uint64_t seed = 0;
};

struct SlConfig {
  std::size_t steps = 500;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

// Weighted SUM (not mean): sum_b t_b * z^b. Shares the hypothesis class of
// the adaptive controller, so SL/GAC results are directly comparable.
Matrix2D combine_fixed(const LogitStack& stack, const std::vector<double>& temps);

// Mean cross-entropy of softmax(combine_fixed(stack, temps)) against the
// stack's labels; the fitness/loss both GAC and SL minimize.
double stack_cross_entropy(const LogitStack& stack, const std::vector<double>& temps);

// Loss and gradient for SL's parameterization t_b = softplus(theta_b).
double sl_loss_grad(const LogitStack& stack, const std::vector<double>& theta,
                    std::vector<double>* grad);

// Tournament-selection GA over log-temperature genomes; deterministic in
// cfg.seed regardless of how fitness evaluation is parallelized.
// best_trace, when given, receives the best-ever fitness after each generation.
TemperatureVector gac_fit(const LogitStack& val_stack, const GacConfig& cfg,
                          std::vector<double>* best_trace = nullptr);

// Full-batch adaptive-moment descent on theta, initialized at t = 1;
// returns the iterate with the lowest validation loss.
TemperatureVector sl_fit(const LogitStack& val_stack, const SlConfig& cfg,
                         std::vector<double>* loss_trace = nullptr);

// train-subcommand schema:
// {"type": "fixed-temps", "backbones": [...], "temps": [...], "config": {...}}
void save_fixed_temps(const TemperatureVector& temps, const std::filesystem::path& path,
                      const std::string& method);
TemperatureVector load_fixed_temps(const std::filesystem::path& path);

}  // namespace logitfuse
