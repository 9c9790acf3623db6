#include "logitfuse/ensembles.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "logitfuse/parallel.hpp"

namespace logitfuse {

std::vector<double> softmax(const double* row, std::size_t n, double t) {
  if (t <= 0.0)
    throw Error(ErrorKind::non_positive_temperature,
                "temperature must be positive, got " + std::to_string(t));
  double max_v = row[0];
  for (std::size_t i = 1; i < n; ++i) max_v = std::max(max_v, row[i]);
  std::vector<double> p(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp((row[i] - max_v) / t);
    sum += p[i];
  }
  for (std::size_t i = 0; i < n; ++i) p[i] /= sum;
  return p;
}

std::vector<double> softmax(const std::vector<double>& row, double t) {
  if (row.empty()) throw Error(ErrorKind::empty_matrix, "softmax of an empty row");
  return softmax(row.data(), row.size(), t);
}

double shannon_entropy(const std::vector<double>& p) {
  double sum = 0.0;
  for (const double v : p) {
    if (v < 0.0) throw Error(ErrorKind::not_a_distribution, "negative probability component");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw Error(ErrorKind::not_a_distribution,
                "probabilities sum to " + std::to_string(sum));
  double h = 0.0;
  for (const double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

void check_stack(const LogitStack& stack) {
  if (stack.logits.empty()) throw Error(ErrorKind::empty_list, "logit stack has no backbones");
  const std::size_t rows = stack.logits[0].rows;
  const std::size_t cols = stack.logits[0].cols;
  if (rows == 0 || cols == 0) throw Error(ErrorKind::empty_matrix, "logit stack block is empty");
  for (const auto& block : stack.logits)
    if (block.rows != rows || block.cols != cols)
      throw Error(ErrorKind::shape_mismatch, "logit stack blocks differ in shape");
}

Matrix2D log_avg(const LogitStack& stack) {
  check_stack(stack);
  const std::size_t b = stack.logits.size();
  const std::size_t cols = stack.logits[0].cols;
  Matrix2D out(stack.logits[0].rows, cols);
  const double inv_b = 1.0 / static_cast<double>(b);
  parallel_for(out.rows, [&](std::size_t r) {
    double* dst = out.row(r);
    for (std::size_t k = 0; k < b; ++k) {
      const double* src = stack.logits[k].row(r);
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
    for (std::size_t c = 0; c < cols; ++c) dst[c] *= inv_b;
  });
  return out;
}

namespace {

std::size_t row_argmax(const double* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

// break residual ties among `tied` classes by the best supporting probability
std::int64_t strongest(const std::vector<std::size_t>& tied,
                       const std::vector<double>& strength) {
  std::size_t winner = tied[0];
  for (const std::size_t c : tied)
    if (strength[c] > strength[winner]) winner = c;
  return static_cast<std::int64_t>(winner);
}

}  // namespace

LabelVector vote_top1(const LogitStack& stack) {
  check_stack(stack);
  const std::size_t b = stack.logits.size();
  const std::size_t rows = stack.logits[0].rows;
  const std::size_t cols = stack.logits[0].cols;
  LabelVector preds(rows);
  parallel_for(rows, [&](std::size_t r) {
    std::vector<std::size_t> votes(b);
    std::vector<std::uint32_t> tally(cols, 0);
    for (std::size_t k = 0; k < b; ++k) {
      votes[k] = row_argmax(stack.logits[k].row(r), cols);
      ++tally[votes[k]];
    }
    std::uint32_t best_count = 0;
    for (const auto c : tally) best_count = std::max(best_count, c);
    std::vector<std::size_t> tied;
    for (std::size_t c = 0; c < cols; ++c)
      if (tally[c] == best_count) tied.push_back(c);
    if (tied.size() == 1) {
      preds[r] = static_cast<std::int64_t>(tied[0]);
      return;
    }
    // tie rule: the tied class backed by the most confident voter wins
    std::vector<double> strength(cols, -1.0);
    for (std::size_t k = 0; k < b; ++k) {
      const std::size_t c = votes[k];
      if (tally[c] != best_count) continue;
      const std::vector<double> p = softmax(stack.logits[k].row(r), cols, 1.0);
      strength[c] = std::max(strength[c], p[c]);
    }
    preds[r] = strongest(tied, strength);
  });
  return preds;
}

LabelVector vote_top3(const LogitStack& stack) {
  check_stack(stack);
  const std::size_t cols = stack.logits[0].cols;
  if (cols < 3)
    throw Error(ErrorKind::too_few_classes,
                "vote_top3 needs at least 3 classes, got " + std::to_string(cols));
  const std::size_t b = stack.logits.size();
  const std::size_t rows = stack.logits[0].rows;
  LabelVector preds(rows);
  parallel_for(rows, [&](std::size_t r) {
    std::vector<std::uint32_t> weight(cols, 0);
    std::vector<std::array<std::size_t, 3>> top3(b);
    for (std::size_t k = 0; k < b; ++k) {
      const double* row = stack.logits[k].row(r);
      // selection of 3 by (value desc, index asc)
      std::array<std::size_t, 3>& ranks = top3[k];
      ranks = {0, 0, 0};
      std::array<double, 3> vals = {row[0], -HUGE_VAL, -HUGE_VAL};
      for (std::size_t c = 1; c < cols; ++c) {
        if (row[c] > vals[0]) {
          vals = {row[c], vals[0], vals[1]};
          ranks = {c, ranks[0], ranks[1]};
        } else if (row[c] > vals[1]) {
          vals[2] = vals[1];
          ranks[2] = ranks[1];
          vals[1] = row[c];
          ranks[1] = c;
        } else if (row[c] > vals[2]) {
          vals[2] = row[c];
          ranks[2] = c;
        }
      }
      weight[ranks[0]] += 3;
      weight[ranks[1]] += 2;
      weight[ranks[2]] += 1;
    }
    std::uint32_t best_weight = 0;
    for (const auto w : weight) best_weight = std::max(best_weight, w);
    std::vector<std::size_t> tied;
    for (std::size_t c = 0; c < cols; ++c)
      if (weight[c] == best_weight) tied.push_back(c);
    if (tied.size() == 1) {
      preds[r] = static_cast<std::int64_t>(tied[0]);
      return;
    }
    // reuse the vote_top1 rule: strongest probability among backbones whose
    // top-3 contains the tied class (probability of the class itself)
    std::vector<double> strength(cols, -1.0);
    for (std::size_t k = 0; k < b; ++k) {
      std::vector<double> p;
      for (const std::size_t c : top3[k]) {
        if (weight[c] != best_weight) continue;
        if (p.empty()) p = softmax(stack.logits[k].row(r), cols, 1.0);
        strength[c] = std::max(strength[c], p[c]);
      }
    }
    preds[r] = strongest(tied, strength);
  });
  return preds;
}

LabelVector confidence_select(const LogitStack& stack) {
  check_stack(stack);
  const std::size_t b = stack.logits.size();
  const std::size_t rows = stack.logits[0].rows;
  const std::size_t cols = stack.logits[0].cols;
  LabelVector preds(rows);
  parallel_for(rows, [&](std::size_t r) {
    std::size_t chosen = 0;
    double best_entropy = HUGE_VAL;
    for (std::size_t k = 0; k < b; ++k) {
      const std::vector<double> p = softmax(stack.logits[k].row(r), cols, 1.0);
      double h = 0.0;
      for (const double v : p)
        if (v > 0.0) h -= v * std::log(v);
      if (h < best_entropy) {  // ties keep the lowest backbone index
        best_entropy = h;
        chosen = k;
      }
    }
    preds[r] = static_cast<std::int64_t>(row_argmax(stack.logits[chosen].row(r), cols));
  });
  return preds;
}

LogitStack zscore_stack(const LogitStack& stack) {
  check_stack(stack);
  LogitStack out = stack;
  for (auto& block : out.logits) {
    const std::size_t n = block.values.size();
    double mean = 0.0;
    for (const double v : block.values) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const double v : block.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    if (sd < 1e-12)
      throw Error(ErrorKind::degenerate_input, "z-scoring a constant logit block");
    parallel_for(n, [&](std::size_t i) { block.values[i] = (block.values[i] - mean) / sd; });
  }
  return out;
}

}  // namespace logitfuse
