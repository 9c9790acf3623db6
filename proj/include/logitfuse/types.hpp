#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace logitfuse {

// Every recoverable failure is thrown as Error with a machine-checkable kind.
// The CLI maps data/validation kinds to exit code 1 and usage to exit code 2.
enum class ErrorKind {
  io_failure,
  malformed_header,
  unsupported_dtype,
  non_finite_value,
  schema_violation,
  duplicate_backbone_name,
  unknown_backbone_name,
  empty_matrix,
  empty_list,
  empty_union,
  empty_split,
  empty_class_set,
  length_mismatch,
  shape_mismatch,
  dim_mismatch_on_load,
  too_many_backbones,
  too_few_classes,
  zero_baseline,
  degenerate_input,
  non_positive_temperature,
  not_a_distribution,
  non_finite_loss,
  missing_features,
  missing_combiner_state,
  infeasible_rates,
  usage,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

const char* error_kind_name(ErrorKind kind);

// Dense row-major matrix. Logits and features are stored as double internally;
// on-disk npy payloads are float32, so a load/save round trip is bit-exact.
struct Matrix2D {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix2D() = default;
  Matrix2D(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double* row(std::size_t r) { return values.data() + r * cols; }
  const double* row(std::size_t r) const { return values.data() + r * cols; }

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  bool empty() const { return rows == 0 || cols == 0; }
};

using LabelVector = std::vector<std::int64_t>;

// Logits for the same examples under B backbones, stacked in manifest order.
struct LogitStack {
  std::vector<std::string> names;    // backbone names, parallel to `logits`
  std::vector<Matrix2D> logits;      // each n x C
  LabelVector labels;                // length n

  std::size_t num_backbones() const { return logits.size(); }
  std::size_t num_examples() const { return labels.size(); }
  std::size_t num_classes() const { return logits.empty() ? 0 : logits[0].cols; }
};

}  // namespace logitfuse
