#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "logitfuse/types.hpp"

namespace logitfuse {

struct ShotSample {
  std::size_t shots = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> indices;  // sorted ascending; min(n, class size) per class
};

// Uniform without-replacement per-class draw; classes smaller than n
// contribute everything they have.
ShotSample sample_shots(const LabelVector& labels, std::size_t n, std::uint64_t seed);

// Stratified split of `indices`: per class, ceil(fraction * count) examples go
// to the holdout (none when the class is a singleton). Returns (fit, holdout),
// both sorted; disjoint union equals the input.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(
    const std::vector<std::size_t>& indices, const LabelVector& labels, double fraction,
    std::uint64_t seed);

Matrix2D gather_rows(const Matrix2D& matrix, const std::vector<std::size_t>& indices);
LabelVector gather_labels(const LabelVector& labels, const std::vector<std::size_t>& indices);

struct LinearProbe {
  Matrix2D w;             // C x D
  std::vector<double> b;  // C
  std::string backbone;
};

struct ProbeConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;  // echoed into saved models; the fit itself is full-batch
};

// Softmax regression on L2-normalized features (normalization is internal).
// init (C x D) seeds W when given — language weights slot — zeros otherwise.
LinearProbe probe_fit(const Matrix2D& features, const LabelVector& labels, const Matrix2D* init,
                      const ProbeConfig& cfg, std::vector<double>* loss_trace = nullptr);

// Loss/gradient of the probe objective; exposed for finite-difference checks.
double probe_loss_grad(const Matrix2D& normalized_features, const LabelVector& labels,
                       const Matrix2D& w, const std::vector<double>& b, Matrix2D* grad_w,
                       std::vector<double>* grad_b);

// W xhat + b on L2-normalized rows; plugs into any combiner as a logit block.
Matrix2D probe_logits(const LinearProbe& probe, const Matrix2D& features);

Matrix2D l2_normalize_rows(const Matrix2D& features);

void probe_save(const LinearProbe& probe, const std::filesystem::path& path);
LinearProbe probe_load(const std::filesystem::path& path);

}  // namespace logitfuse
