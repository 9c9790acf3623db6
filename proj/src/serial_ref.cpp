#include "logitfuse/serial_ref.hpp"

#include <algorithm>
#include <cmath>

#include "logitfuse/scalar.hpp"

namespace logitfuse::serial {

LabelVector top1(const Matrix2D& logits) {
  if (logits.empty()) throw Error(ErrorKind::empty_matrix, "top1 of an empty matrix");
  LabelVector preds(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const double* row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols; ++c)
      if (row[c] > row[best]) best = c;
    preds[r] = static_cast<std::int64_t>(best);
  }
  return preds;
}

Matrix2D log_avg(const LogitStack& stack) {
  const std::size_t b = stack.logits.size();
  const std::size_t cols = stack.logits[0].cols;
  Matrix2D out(stack.logits[0].rows, cols);
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t r = 0; r < out.rows; ++r) {
    double* dst = out.row(r);
    for (std::size_t k = 0; k < b; ++k) {
      const double* src = stack.logits[k].row(r);
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
    for (std::size_t c = 0; c < cols; ++c) dst[c] *= inv_b;
  }
  return out;
}

Matrix2D combine_fixed(const LogitStack& stack, const std::vector<double>& temps) {
  const std::size_t b = stack.logits.size();
  const std::size_t cols = stack.logits[0].cols;
  Matrix2D out(stack.logits[0].rows, cols);
  for (std::size_t r = 0; r < out.rows; ++r) {
    double* dst = out.row(r);
    for (std::size_t k = 0; k < b; ++k) {
      const double* src = stack.logits[k].row(r);
      for (std::size_t c = 0; c < cols; ++c) dst[c] += temps[k] * src[c];
    }
  }
  return out;
}

Matrix2D nlc_forward(const NlcModel& model, const Matrix2D& features) {
  Matrix2D temps(features.rows, model.output_dim);
  std::vector<double> x(model.input_dim);
  std::vector<double> h(model.hidden_dim);
  for (std::size_t r = 0; r < features.rows; ++r) {
    std::copy(features.row(r), features.row(r) + features.cols, x.begin());
    if (model.normalize_features) {
      std::size_t offset = 0;
      const std::size_t blocks = model.feature_dims.empty() ? 1 : model.feature_dims.size();
      for (std::size_t k = 0; k < blocks; ++k) {
        const std::size_t width =
            model.feature_dims.empty() ? model.input_dim : model.feature_dims[k];
        double sq = 0.0;
        for (std::size_t d = 0; d < width; ++d) sq += x[offset + d] * x[offset + d];
        if (sq > 0.0) {
          const double inv = 1.0 / std::sqrt(sq);
          for (std::size_t d = 0; d < width; ++d) x[offset + d] *= inv;
        }
        offset += width;
      }
    }
    for (std::size_t j = 0; j < model.hidden_dim; ++j) {
      double a = model.b1[j];
      const double* w = model.w1.data() + j * model.input_dim;
      for (std::size_t d = 0; d < model.input_dim; ++d) a += w[d] * x[d];
      h[j] = a > 0.0 ? a : 0.0;
    }
    for (std::size_t k = 0; k < model.output_dim; ++k) {
      double a = model.b2[k];
      const double* w = model.w2.data() + k * model.hidden_dim;
      for (std::size_t j = 0; j < model.hidden_dim; ++j) a += w[j] * h[j];
      temps.at(r, k) = softplus(a);
    }
  }
  return temps;
}

double mean_nll(const Matrix2D& logits, const LabelVector& labels, double t) {
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const double* row = logits.row(r);
    double max_v = row[0];
    for (std::size_t c = 1; c < logits.cols; ++c) max_v = std::max(max_v, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) sum += std::exp((row[c] - max_v) / t);
    const auto y = static_cast<std::size_t>(labels[r]);
    total += std::log(sum) - (row[y] - max_v) / t;
  }
  return total / static_cast<double>(logits.rows);
}

}  // namespace logitfuse::serial
