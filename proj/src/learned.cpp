#include "logitfuse/learned.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "logitfuse/adam.hpp"
#include "logitfuse/ensembles.hpp"
#include "logitfuse/parallel.hpp"
#include "logitfuse/rng.hpp"
#include "logitfuse/scalar.hpp"

namespace logitfuse {

namespace {

void check_labeled_stack(const LogitStack& stack) {
  check_stack(stack);
  if (stack.labels.size() != stack.logits[0].rows)
    throw Error(ErrorKind::length_mismatch,
                std::to_string(stack.labels.size()) + " labels vs " +
                    std::to_string(stack.logits[0].rows) + " rows");
}

}  // namespace

Matrix2D combine_fixed(const LogitStack& stack, const std::vector<double>& temps) {
  check_stack(stack);
  if (temps.size() != stack.logits.size())
    throw Error(ErrorKind::length_mismatch,
                std::to_string(temps.size()) + " temperatures for " +
                    std::to_string(stack.logits.size()) + " backbones");
  for (const double t : temps)
    if (t <= 0.0)
      throw Error(ErrorKind::non_positive_temperature,
                  "temperature must be positive, got " + std::to_string(t));
  const std::size_t b = stack.logits.size();
  const std::size_t cols = stack.logits[0].cols;
  Matrix2D out(stack.logits[0].rows, cols);
  parallel_for(out.rows, [&](std::size_t r) {
    double* dst = out.row(r);
    for (std::size_t k = 0; k < b; ++k) {
      const double* src = stack.logits[k].row(r);
      const double t = temps[k];
      for (std::size_t c = 0; c < cols; ++c) dst[c] += t * src[c];
    }
  });
  return out;
}

double stack_cross_entropy(const LogitStack& stack, const std::vector<double>& temps) {
  check_labeled_stack(stack);
  return mean_nll(combine_fixed(stack, temps), stack.labels, 1.0);
}

double sl_loss_grad(const LogitStack& stack, const std::vector<double>& theta,
                    std::vector<double>* grad) {
  check_labeled_stack(stack);
  const std::size_t b = stack.logits.size();
  if (theta.size() != b)
    throw Error(ErrorKind::length_mismatch, "theta length does not match backbone count");
  std::vector<double> temps(b);
  for (std::size_t k = 0; k < b; ++k) temps[k] = softplus(theta[k]);

  const Matrix2D combined = combine_fixed(stack, temps);
  const std::size_t n = combined.rows;
  const std::size_t cols = combined.cols;

  struct Acc {
    double loss = 0.0;
    std::vector<double> dt;
  };
  Acc zero;
  zero.dt.assign(b, 0.0);
  Acc total = blocked_reduce(
      n, 256, zero,
      [&](std::size_t lo, std::size_t hi) {
        Acc acc;
        acc.dt.assign(b, 0.0);
        std::vector<double> p(cols);
        for (std::size_t r = lo; r < hi; ++r) {
          const double* row = combined.row(r);
          double max_v = row[0];
          for (std::size_t c = 1; c < cols; ++c) max_v = std::max(max_v, row[c]);
          double sum = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            p[c] = std::exp(row[c] - max_v);
            sum += p[c];
          }
          const auto y = static_cast<std::size_t>(stack.labels[r]);
          acc.loss += std::log(sum) - (row[y] - max_v);
          for (std::size_t c = 0; c < cols; ++c) p[c] /= sum;
          p[y] -= 1.0;  // now p = dL_r / dz*
          for (std::size_t k = 0; k < b; ++k) {
            const double* z = stack.logits[k].row(r);
            double d = 0.0;
            for (std::size_t c = 0; c < cols; ++c) d += p[c] * z[c];
            acc.dt[k] += d;
          }
        }
        return acc;
      },
      [](Acc a, const Acc& c) {
        a.loss += c.loss;
        for (std::size_t k = 0; k < a.dt.size(); ++k) a.dt[k] += c.dt[k];
        return a;
      });

  const double loss = total.loss / static_cast<double>(n);
  if (!std::isfinite(loss)) throw Error(ErrorKind::non_finite_loss, "SL loss diverged");
  if (grad) {
    grad->assign(b, 0.0);
    for (std::size_t k = 0; k < b; ++k)
      (*grad)[k] = total.dt[k] / static_cast<double>(n) * sigmoid(theta[k]);
  }
  return loss;
}

TemperatureVector sl_fit(const LogitStack& val_stack, const SlConfig& cfg,
                         std::vector<double>* loss_trace) {
  if (cfg.steps < 1 || cfg.learning_rate <= 0.0)
    throw Error(ErrorKind::schema_violation, "SL config: steps >= 1 and learning_rate > 0");
  check_labeled_stack(val_stack);
  const std::size_t b = val_stack.logits.size();
  const double theta_lo = softplus_inv(kTempMin);
  const double theta_hi = softplus_inv(kTempMax);

  std::vector<double> theta(b, softplus_inv(1.0));  // start at the unweighted sum
  std::vector<double> best_theta = theta;
  double best_loss = HUGE_VAL;
  Adam adam(b, cfg.learning_rate);
  std::vector<double> grad;
  if (loss_trace) loss_trace->clear();

  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    const double loss = sl_loss_grad(val_stack, theta, step < cfg.steps ? &grad : nullptr);
    if (loss_trace) loss_trace->push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best_theta = theta;
    }
    if (step == cfg.steps) break;
    adam.step(theta, grad);
    // projection keeps every temperature inside the calibration bounds
    for (double& v : theta) v = std::clamp(v, theta_lo, theta_hi);
  }

  TemperatureVector out;
  out.names = val_stack.names;
  out.temps.resize(b);
  for (std::size_t k = 0; k < b; ++k) out.temps[k] = softplus(best_theta[k]);
  return out;
}

TemperatureVector gac_fit(const LogitStack& val_stack, const GacConfig& cfg,
                          std::vector<double>* best_trace) {
  if (cfg.population < cfg.elitism + 2 || cfg.generations < 1 || cfg.tournament_size < 1 ||
      cfg.mutation_sigma <= 0.0)
    throw Error(ErrorKind::schema_violation, "GA config: population >= elitism + 2, counts >= 1");
  check_labeled_stack(val_stack);
  const std::size_t b = val_stack.logits.size();
  const double log_lo = std::log(kTempMin);
  const double log_hi = std::log(kTempMax);

  auto decode = [&](const std::vector<double>& genome) {
    std::vector<double> temps(b);
    for (std::size_t k = 0; k < b; ++k) temps[k] = std::clamp(std::exp(genome[k]), kTempMin, kTempMax);
    return temps;
  };

  Rng rng(cfg.seed);
  std::vector<std::vector<double>> population(cfg.population, std::vector<double>(b, 0.0));
  for (std::size_t i = 1; i < cfg.population; ++i)  // genome 0 stays at t = 1
    for (std::size_t k = 0; k < b; ++k) population[i][k] = 0.5 * rng.normal();

  std::vector<double> fitness(cfg.population);
  std::vector<double> best_genome = population[0];
  double best_fitness = HUGE_VAL;
  if (best_trace) best_trace->clear();

  for (std::size_t gen = 0; gen < cfg.generations; ++gen) {
    // pure evaluations: safe to parallelize without touching the rng stream
    parallel_for(cfg.population, [&](std::size_t i) {
      const double f = stack_cross_entropy(val_stack, decode(population[i]));
      fitness[i] = std::isfinite(f) ? f : HUGE_VAL;
    });
    for (std::size_t i = 0; i < cfg.population; ++i) {
      if (fitness[i] < best_fitness) {
        best_fitness = fitness[i];
        best_genome = population[i];
      }
    }
    if (best_trace) best_trace->push_back(best_fitness);
    if (gen + 1 == cfg.generations) break;

    std::vector<std::size_t> ranking(cfg.population);
    for (std::size_t i = 0; i < cfg.population; ++i) ranking[i] = i;
    std::sort(ranking.begin(), ranking.end(), [&](std::size_t a, std::size_t c) {
      return fitness[a] != fitness[c] ? fitness[a] < fitness[c] : a < c;
    });

    std::vector<std::vector<double>> next;
    next.reserve(cfg.population);
    for (std::size_t e = 0; e < cfg.elitism; ++e) next.push_back(population[ranking[e]]);
    while (next.size() < cfg.population) {
      std::size_t winner = rng.index(cfg.population);
      for (std::size_t k = 1; k < cfg.tournament_size; ++k) {
        const std::size_t rival = rng.index(cfg.population);
        if (fitness[rival] < fitness[winner] ||
            (fitness[rival] == fitness[winner] && rival < winner))
          winner = rival;
      }
      std::vector<double> child = population[winner];
      for (std::size_t k = 0; k < b; ++k)
        child[k] = std::clamp(child[k] + cfg.mutation_sigma * rng.normal(), log_lo, log_hi);
      next.push_back(std::move(child));
    }
    population = std::move(next);
  }

  TemperatureVector out;
  out.names = val_stack.names;
  out.temps = decode(best_genome);
  return out;
}

void save_fixed_temps(const TemperatureVector& temps, const std::filesystem::path& path,
                      const std::string& method) {
  nlohmann::json doc;
  doc["type"] = "fixed-temps";
  doc["backbones"] = temps.names;
  doc["temps"] = temps.temps;
  doc["config"] = {{"method", method}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io_failure, "cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

TemperatureVector load_fixed_temps(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io_failure, "cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::schema_violation, path.string() + ": invalid JSON: " + e.what());
  }
  if (!doc.is_object() || doc.value("type", "") != "fixed-temps")
    throw Error(ErrorKind::schema_violation, path.string() + ": not a fixed-temps model");
  if (!doc.contains("backbones") || !doc.contains("temps") || !doc["backbones"].is_array() ||
      !doc["temps"].is_array() || doc["backbones"].size() != doc["temps"].size())
    throw Error(ErrorKind::schema_violation,
                path.string() + ": \"backbones\" and \"temps\" must be arrays of equal length");
  TemperatureVector out;
  for (const auto& name : doc["backbones"]) out.names.push_back(name.get<std::string>());
  for (const auto& t : doc["temps"]) out.temps.push_back(t.get<double>());
  return out;
}

}  // namespace logitfuse
