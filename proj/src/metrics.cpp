#include "logitfuse/metrics.hpp"

#include <cmath>

#include "logitfuse/parallel.hpp"

namespace logitfuse {

namespace {

void check_masks(const std::vector<CorrectnessMask>& masks, std::size_t minimum) {
  if (masks.size() < minimum)
    throw Error(ErrorKind::empty_list,
                "need at least " + std::to_string(minimum) + " correctness masks");
  for (const auto& mask : masks)
    if (mask.bits.size() != masks[0].bits.size())
      throw Error(ErrorKind::length_mismatch, "correctness masks differ in length");
}

std::uint64_t count_where(std::size_t n, auto&& pred) {
  return blocked_reduce(
      n, kReduceBlock, std::uint64_t{0},
      [&](std::size_t lo, std::size_t hi) {
        std::uint64_t c = 0;
        for (std::size_t i = lo; i < hi; ++i) c += pred(i) ? 1 : 0;
        return c;
      },
      [](std::uint64_t a, std::uint64_t b) { return a + b; });
}

}  // namespace

std::size_t CorrectnessMask::count_true() const {
  return count_where(bits.size(), [&](std::size_t i) { return bits[i] != 0; });
}

LabelVector top1(const Matrix2D& logits) {
  if (logits.empty()) throw Error(ErrorKind::empty_matrix, "top1 of an empty matrix");
  LabelVector preds(logits.rows);
  parallel_for(logits.rows, [&](std::size_t r) {
    const double* row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols; ++c)
      if (row[c] > row[best]) best = c;
    preds[r] = static_cast<std::int64_t>(best);
  });
  return preds;
}

double accuracy(const Matrix2D& logits, const LabelVector& labels) {
  if (logits.rows != labels.size())
    throw Error(ErrorKind::length_mismatch,
                std::to_string(logits.rows) + " rows vs " + std::to_string(labels.size()) +
                    " labels");
  return accuracy(top1(logits), labels);
}

double accuracy(const LabelVector& preds, const LabelVector& labels) {
  if (preds.size() != labels.size())
    throw Error(ErrorKind::length_mismatch,
                std::to_string(preds.size()) + " predictions vs " + std::to_string(labels.size()) +
                    " labels");
  if (labels.empty()) throw Error(ErrorKind::empty_matrix, "accuracy over zero examples");
  const std::uint64_t hits = count_where(labels.size(), [&](std::size_t i) {
    return preds[i] == labels[i];
  });
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

CorrectnessMask correctness_mask(const std::string& name, const Matrix2D& logits,
                                 const LabelVector& labels) {
  if (logits.rows != labels.size())
    throw Error(ErrorKind::length_mismatch,
                std::to_string(logits.rows) + " rows vs " + std::to_string(labels.size()) +
                    " labels");
  const LabelVector preds = top1(logits);
  CorrectnessMask mask;
  mask.name = name;
  mask.bits.resize(labels.size());
  parallel_for(labels.size(), [&](std::size_t i) { mask.bits[i] = preds[i] == labels[i]; });
  return mask;
}

double oracle_accuracy(const std::vector<CorrectnessMask>& masks) {
  check_masks(masks, 1);
  const std::size_t n = masks[0].bits.size();
  if (n == 0) throw Error(ErrorKind::length_mismatch, "oracle over zero examples");
  const std::uint64_t hits = count_where(n, [&](std::size_t i) {
    for (const auto& mask : masks)
      if (mask.bits[i]) return true;
    return false;
  });
  return static_cast<double>(hits) / static_cast<double>(n);
}

double diversity(const std::vector<CorrectnessMask>& masks) {
  check_masks(masks, 2);
  const std::size_t n = masks[0].bits.size();
  const std::uint64_t union_count = count_where(n, [&](std::size_t i) {
    for (const auto& mask : masks)
      if (mask.bits[i]) return true;
    return false;
  });
  if (union_count == 0)
    throw Error(ErrorKind::empty_union, "every backbone is wrong on every example");
  const std::uint64_t intersection_count = count_where(n, [&](std::size_t i) {
    for (const auto& mask : masks)
      if (!mask.bits[i]) return false;
    return true;
  });
  return 1.0 - static_cast<double>(intersection_count) / static_cast<double>(union_count);
}

OverlapTable overlap_table(const std::vector<CorrectnessMask>& masks) {
  check_masks(masks, 1);
  const std::size_t b = masks.size();
  if (b > 16)
    throw Error(ErrorKind::too_many_backbones,
                std::to_string(b) + " backbones; overlap enumeration caps at 16");
  const std::size_t n = masks[0].bits.size();

  OverlapTable table;
  for (const auto& mask : masks) table.names.push_back(mask.name);

  const std::size_t subsets = std::size_t{1} << b;
  table.counts = blocked_reduce(
      n, kReduceBlock, std::vector<std::uint64_t>(subsets, 0),
      [&](std::size_t lo, std::size_t hi) {
        std::vector<std::uint64_t> local(subsets, 0);
        for (std::size_t i = lo; i < hi; ++i) {
          std::size_t key = 0;
          for (std::size_t k = 0; k < b; ++k)
            if (masks[k].bits[i]) key |= std::size_t{1} << k;
          ++local[key];
        }
        return local;
      },
      [](std::vector<std::uint64_t> acc, const std::vector<std::uint64_t>& part) {
        for (std::size_t s = 0; s < acc.size(); ++s) acc[s] += part[s];
        return acc;
      });

  table.per_backbone.assign(b, 0);
  for (std::size_t s = 1; s < subsets; ++s) {
    table.union_count += table.counts[s];
    for (std::size_t k = 0; k < b; ++k)
      if (s & (std::size_t{1} << k)) table.per_backbone[k] += table.counts[s];
  }
  table.intersection_count = table.counts[subsets - 1];
  return table;
}

double relative_improvement(double method_acc, double best_single_acc) {
  if (best_single_acc <= 0.0)
    throw Error(ErrorKind::zero_baseline, "best single accuracy must be positive");
  return (method_acc - best_single_acc) / best_single_acc;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size())
    throw Error(ErrorKind::length_mismatch, "pearson inputs differ in length");
  const std::size_t n = xs.size();
  if (n < 2) throw Error(ErrorKind::degenerate_input, "pearson needs at least 2 points");
  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_x += xs[i];
    mean_y += ys[i];
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mean_x;
    const double dy = ys[i] - mean_y;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw Error(ErrorKind::degenerate_input, "pearson of a constant vector");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace logitfuse
