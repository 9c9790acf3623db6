#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "logitfuse/types.hpp"

namespace logitfuse {

// std::uint8_t rather than vector<bool> so rows can be written in parallel.
struct CorrectnessMask {
  std::string name;
  std::vector<std::uint8_t> bits;  // 1 <=> top-1 prediction equals label

  std::size_t count_true() const;
};

// Per-row argmax; ties break to the lowest class index.
LabelVector top1(const Matrix2D& logits);

double accuracy(const Matrix2D& logits, const LabelVector& labels);
double accuracy(const LabelVector& preds, const LabelVector& labels);

CorrectnessMask correctness_mask(const std::string& name, const Matrix2D& logits,
                                 const LabelVector& labels);

// Fraction of examples at least one mask gets right; >= every single accuracy.
double oracle_accuracy(const std::vector<CorrectnessMask>& masks);

// 1 - |intersection of correct sets| / |union of correct sets|.
double diversity(const std::vector<CorrectnessMask>& masks);

struct OverlapTable {
  std::vector<std::string> names;
  // counts[s] = examples correct under exactly the backbones in bitmask s;
  // index 0 holds the nobody-correct remainder for completeness.
  std::vector<std::uint64_t> counts;
  std::vector<std::uint64_t> per_backbone;  // marginal: popcount of each mask
  std::uint64_t union_count = 0;
  std::uint64_t intersection_count = 0;
};

OverlapTable overlap_table(const std::vector<CorrectnessMask>& masks);

double relative_improvement(double method_acc, double best_single_acc);

double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace logitfuse
