#include "logitfuse/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "logitfuse/ensembles.hpp"
#include "logitfuse/parallel.hpp"

namespace logitfuse {

double mean_nll(const Matrix2D& logits, const LabelVector& labels, double t) {
  if (t <= 0.0)
    throw Error(ErrorKind::non_positive_temperature,
                "temperature must be positive, got " + std::to_string(t));
  if (logits.rows != labels.size())
    throw Error(ErrorKind::length_mismatch,
                std::to_string(logits.rows) + " rows vs " + std::to_string(labels.size()) +
                    " labels");
  if (logits.empty()) throw Error(ErrorKind::empty_matrix, "NLL over zero examples");
  const std::size_t cols = logits.cols;
  const double total = blocked_reduce(
      logits.rows, kReduceBlock, 0.0,
      [&](std::size_t lo, std::size_t hi) {
        double acc = 0.0;
        for (std::size_t r = lo; r < hi; ++r) {
          const double* row = logits.row(r);
          double max_v = row[0];
          for (std::size_t c = 1; c < cols; ++c) max_v = std::max(max_v, row[c]);
          double sum = 0.0;
          for (std::size_t c = 0; c < cols; ++c) sum += std::exp((row[c] - max_v) / t);
          const auto y = static_cast<std::size_t>(labels[r]);
          acc += std::log(sum) - (row[y] - max_v) / t;
        }
        return acc;
      },
      [](double a, double b) { return a + b; });
  return total / static_cast<double>(logits.rows);
}

double fit_temperature(const Matrix2D& logits, const LabelVector& labels, double* final_nll) {
  constexpr int kGridPoints = 64;
  const double log_lo = std::log(kTempMin);
  const double log_hi = std::log(kTempMax);

  auto nll_at = [&](double t) { return mean_nll(logits, labels, t); };

  std::vector<double> grid(kGridPoints);
  for (int i = 0; i < kGridPoints; ++i)
    grid[i] = std::exp(log_lo + (log_hi - log_lo) * i / (kGridPoints - 1));
  grid.front() = kTempMin;  // pin the exact bounds against exp/log rounding
  grid.back() = kTempMax;

  double best_t = grid[0];
  double best_nll = nll_at(best_t);
  auto consider = [&](double t) {
    const double v = nll_at(t);
    // strict improvement, or equal value at a lower t: keeps ties deterministic
    if (v < best_nll || (v == best_nll && t < best_t)) {
      best_nll = v;
      best_t = t;
    }
  };
  for (int i = 1; i < kGridPoints; ++i) consider(grid[i]);

  // golden-section around the best grid point, in log space
  const int best_idx =
      static_cast<int>(std::lower_bound(grid.begin(), grid.end(), best_t) - grid.begin());
  double a = std::log(grid[std::max(best_idx - 1, 0)]);
  double b = std::log(grid[std::min(best_idx + 1, kGridPoints - 1)]);
  constexpr double kInvPhi = 0.6180339887498949;
  double x1 = b - kInvPhi * (b - a);
  double x2 = a + kInvPhi * (b - a);
  double f1 = nll_at(std::exp(x1));
  double f2 = nll_at(std::exp(x2));
  while (std::exp(b) - std::exp(a) > 1e-4) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - kInvPhi * (b - a);
      f1 = nll_at(std::exp(x1));
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (b - a);
      f2 = nll_at(std::exp(x2));
    }
  }
  consider(std::clamp(std::exp((a + b) / 2.0), kTempMin, kTempMax));
  consider(1.0);  // guarantees NLL(fit) <= NLL(1) by construction

  if (final_nll) *final_nll = best_nll;
  return best_t;
}

TemperatureVector fit_temperatures(const LogitStack& stack) {
  check_stack(stack);
  if (stack.labels.size() != stack.logits[0].rows)
    throw Error(ErrorKind::length_mismatch, "stack labels do not match logit rows");
  TemperatureVector out;
  out.names = stack.names;
  out.temps.resize(stack.logits.size());
  out.nll.resize(stack.logits.size());
  // mean_nll already parallelizes internally; the per-backbone loop stays serial
  for (std::size_t b = 0; b < stack.logits.size(); ++b)
    out.temps[b] = fit_temperature(stack.logits[b], stack.labels, &out.nll[b]);
  return out;
}

Matrix2D apply_temperature(const Matrix2D& logits, double t) {
  if (t <= 0.0)
    throw Error(ErrorKind::non_positive_temperature,
                "temperature must be positive, got " + std::to_string(t));
  Matrix2D out = logits;
  parallel_for(out.values.size(), [&](std::size_t i) { out.values[i] /= t; });
  return out;
}

namespace {

void check_temps(const LogitStack& stack, const TemperatureVector& temps) {
  if (temps.temps.size() != stack.logits.size())
    throw Error(ErrorKind::length_mismatch,
                std::to_string(temps.temps.size()) + " temperatures for " +
                    std::to_string(stack.logits.size()) + " backbones");
  for (const double t : temps.temps)
    if (t <= 0.0)
      throw Error(ErrorKind::non_positive_temperature,
                  "temperature must be positive, got " + std::to_string(t));
}

}  // namespace

Matrix2D calibrated_log_avg(const LogitStack& stack, const TemperatureVector& temps) {
  check_stack(stack);
  check_temps(stack, temps);
  const std::size_t b = stack.logits.size();
  const std::size_t cols = stack.logits[0].cols;
  Matrix2D out(stack.logits[0].rows, cols);
  const double inv_b = 1.0 / static_cast<double>(b);
  parallel_for(out.rows, [&](std::size_t r) {
    double* dst = out.row(r);
    for (std::size_t k = 0; k < b; ++k) {
      const double* src = stack.logits[k].row(r);
      const double inv_t = 1.0 / temps.temps[k];
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c] * inv_t;
    }
    for (std::size_t c = 0; c < cols; ++c) dst[c] *= inv_b;
  });
  return out;
}

LabelVector calibrated_confidence(const LogitStack& stack, const TemperatureVector& temps) {
  check_stack(stack);
  check_temps(stack, temps);
  LogitStack scaled = stack;
  for (std::size_t k = 0; k < scaled.logits.size(); ++k)
    scaled.logits[k] = apply_temperature(scaled.logits[k], temps.temps[k]);
  return confidence_select(scaled);
}

void save_temperatures(const TemperatureVector& temps, const std::filesystem::path& path) {
  nlohmann::json doc;
  nlohmann::json temp_map = nlohmann::json::object();
  nlohmann::json nll_map = nlohmann::json::object();
  for (std::size_t i = 0; i < temps.temps.size(); ++i) {
    const std::string key =
        i < temps.names.size() ? temps.names[i] : "backbone_" + std::to_string(i);
    temp_map[key] = temps.temps[i];
    if (i < temps.nll.size()) nll_map[key] = temps.nll[i];
  }
  doc["temps"] = temp_map;
  doc["nll"] = nll_map;
  doc["split"] = temps.split;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io_failure, "cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

TemperatureVector load_temperatures(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io_failure, "cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::schema_violation, path.string() + ": invalid JSON: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("temps") || !doc["temps"].is_object())
    throw Error(ErrorKind::schema_violation, path.string() + ": missing \"temps\" object");
  TemperatureVector out;
  for (const auto& [name, value] : doc["temps"].items()) {
    if (!value.is_number())
      throw Error(ErrorKind::schema_violation, path.string() + ": temperature for " + name +
                                                   " is not a number");
    out.names.push_back(name);
    out.temps.push_back(value.get<double>());
    if (doc.contains("nll") && doc["nll"].contains(name))
      out.nll.push_back(doc["nll"][name].get<double>());
  }
  if (doc.contains("split") && doc["split"].is_string())
    out.split = doc["split"].get<std::string>();
  return out;
}

TemperatureVector align_temperatures(const TemperatureVector& temps,
                                     const std::vector<std::string>& names) {
  TemperatureVector out;
  out.split = temps.split;
  for (const auto& name : names) {
    const auto it = std::find(temps.names.begin(), temps.names.end(), name);
    if (it == temps.names.end())
      throw Error(ErrorKind::unknown_backbone_name, "no fitted temperature for \"" + name + "\"");
    const std::size_t i = static_cast<std::size_t>(it - temps.names.begin());
    out.names.push_back(name);
    out.temps.push_back(temps.temps[i]);
    if (i < temps.nll.size()) out.nll.push_back(temps.nll[i]);
  }
  return out;
}

}  // namespace logitfuse
