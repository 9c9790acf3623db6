#include "logitfuse/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"
#include "logitfuse/adam.hpp"
#include "logitfuse/blob.hpp"
#include "logitfuse/parallel.hpp"
#include "logitfuse/rng.hpp"

namespace logitfuse {

namespace {

std::map<std::int64_t, std::vector<std::size_t>> by_class(const std::vector<std::size_t>& indices,
                                                          const LabelVector& labels) {
  std::map<std::int64_t, std::vector<std::size_t>> groups;
  for (const std::size_t i : indices) groups[labels[i]].push_back(i);
  return groups;
}

}  // namespace

ShotSample sample_shots(const LabelVector& labels, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::schema_violation, "shots must be >= 1");
  if (labels.empty()) throw Error(ErrorKind::empty_class_set, "no labeled examples to sample");
  std::vector<std::size_t> everything(labels.size());
  for (std::size_t i = 0; i < everything.size(); ++i) everything[i] = i;
  ShotSample sample;
  sample.shots = n;
  sample.seed = seed;
  // one substream per class: class sets draw independently of each other
  for (auto& [label, members] : by_class(everything, labels)) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label)));
    rng.shuffle(members);
    const std::size_t take = std::min(n, members.size());
    sample.indices.insert(sample.indices.end(), members.begin(), members.begin() + take);
  }
  std::sort(sample.indices.begin(), sample.indices.end());
  return sample;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(
    const std::vector<std::size_t>& indices, const LabelVector& labels, double fraction,
    std::uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0)
    throw Error(ErrorKind::schema_violation, "holdout fraction must lie in (0, 1)");
  std::vector<std::size_t> fit, holdout;
  for (auto& [label, members] : by_class(indices, labels)) {
    if (members.size() < 2) {  // singleton classes stay trainable
      fit.insert(fit.end(), members.begin(), members.end());
      continue;
    }
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label)));
    rng.shuffle(members);
    const auto want = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(members.size())));
    const std::size_t take = std::min(want, members.size());
    holdout.insert(holdout.end(), members.begin(), members.begin() + take);
    fit.insert(fit.end(), members.begin() + take, members.end());
  }
  std::sort(fit.begin(), fit.end());
  std::sort(holdout.begin(), holdout.end());
  return {std::move(fit), std::move(holdout)};
}

Matrix2D gather_rows(const Matrix2D& matrix, const std::vector<std::size_t>& indices) {
  Matrix2D out(indices.size(), matrix.cols);
  parallel_for(indices.size(), [&](std::size_t i) {
    const double* src = matrix.row(indices[i]);
    std::copy(src, src + matrix.cols, out.row(i));
  });
  return out;
}

LabelVector gather_labels(const LabelVector& labels, const std::vector<std::size_t>& indices) {
  LabelVector out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
  return out;
}

Matrix2D l2_normalize_rows(const Matrix2D& features) {
  Matrix2D out = features;
  parallel_for(out.rows, [&](std::size_t r) {
    double* row = out.row(r);
    double sq = 0.0;
    for (std::size_t d = 0; d < out.cols; ++d) sq += row[d] * row[d];
    if (sq > 0.0) {
      const double inv = 1.0 / std::sqrt(sq);
      for (std::size_t d = 0; d < out.cols; ++d) row[d] *= inv;
    }
  });
  return out;
}

double probe_loss_grad(const Matrix2D& normalized_features, const LabelVector& labels,
                       const Matrix2D& w, const std::vector<double>& b, Matrix2D* grad_w,
                       std::vector<double>* grad_b) {
  const std::size_t n = normalized_features.rows;
  const std::size_t dim = normalized_features.cols;
  const std::size_t classes = w.rows;
  if (w.cols != dim) throw Error(ErrorKind::shape_mismatch, "probe weight width != feature dim");
  if (b.size() != classes) throw Error(ErrorKind::shape_mismatch, "probe bias length mismatch");
  if (labels.size() != n) throw Error(ErrorKind::length_mismatch, "probe label count mismatch");
  if (n == 0) throw Error(ErrorKind::empty_split, "probe loss over zero examples");

  Matrix2D delta(n, classes);  // softmax(logits) - onehot(y), already / n
  std::vector<double> row_loss(n);
  parallel_for(n, [&](std::size_t r) {
    const double* x = normalized_features.row(r);
    double* d = delta.row(r);
    for (std::size_t c = 0; c < classes; ++c) {
      double a = b[c];
      const double* wc = w.row(c);
      for (std::size_t k = 0; k < dim; ++k) a += wc[k] * x[k];
      d[c] = a;
    }
    double max_v = d[0];
    for (std::size_t c = 1; c < classes; ++c) max_v = std::max(max_v, d[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      d[c] = std::exp(d[c] - max_v);
      sum += d[c];
    }
    const auto y = static_cast<std::size_t>(labels[r]);
    row_loss[r] = std::log(sum) - std::log(d[y]);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t c = 0; c < classes; ++c) d[c] = d[c] / sum * inv_n;
    d[y] -= inv_n;
  });

  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) loss += row_loss[r];
  loss /= static_cast<double>(n);
  if (!std::isfinite(loss)) throw Error(ErrorKind::non_finite_loss, "probe loss diverged");

  if (grad_w) {
    *grad_w = Matrix2D(classes, dim);
    parallel_for(classes * dim, [&](std::size_t cell) {
      const std::size_t c = cell / dim;
      const std::size_t k = cell % dim;
      double acc = 0.0;
      for (std::size_t r = 0; r < n; ++r) acc += delta.at(r, c) * normalized_features.at(r, k);
      grad_w->values[cell] = acc;
    });
  }
  if (grad_b) {
    grad_b->assign(classes, 0.0);
    parallel_for(classes, [&](std::size_t c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < n; ++r) acc += delta.at(r, c);
      (*grad_b)[c] = acc;
    });
  }
  return loss;
}

LinearProbe probe_fit(const Matrix2D& features, const LabelVector& labels, const Matrix2D* init,
                      const ProbeConfig& cfg, std::vector<double>* loss_trace) {
  if (features.rows != labels.size())
    throw Error(ErrorKind::length_mismatch, "probe features/labels length mismatch");
  if (features.empty()) throw Error(ErrorKind::empty_split, "probe training set is empty");
  std::int64_t max_label = 0;
  for (const auto y : labels) max_label = std::max(max_label, y);
  const auto classes = static_cast<std::size_t>(max_label) + 1;

  LinearProbe probe;
  if (init) {
    if (init->rows != classes || init->cols != features.cols)
      throw Error(ErrorKind::shape_mismatch,
                  "probe init is " + std::to_string(init->rows) + "x" +
                      std::to_string(init->cols) + ", expected " + std::to_string(classes) + "x" +
                      std::to_string(features.cols));
    probe.w = *init;
  } else {
    probe.w = Matrix2D(classes, features.cols);
  }
  probe.b.assign(classes, 0.0);

  const Matrix2D xhat = l2_normalize_rows(features);
  Adam opt_w(probe.w.values.size(), cfg.learning_rate);
  Adam opt_b(probe.b.size(), cfg.learning_rate);
  Matrix2D grad_w;
  std::vector<double> grad_b;
  if (loss_trace) loss_trace->clear();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double loss = probe_loss_grad(xhat, labels, probe.w, probe.b, &grad_w, &grad_b);
    if (loss_trace) loss_trace->push_back(loss);
    opt_w.step(probe.w.values, grad_w.values);
    opt_b.step(probe.b, grad_b);
  }
  return probe;
}

Matrix2D probe_logits(const LinearProbe& probe, const Matrix2D& features) {
  if (features.cols != probe.w.cols)
    throw Error(ErrorKind::shape_mismatch,
                "feature width " + std::to_string(features.cols) + ", probe expects " +
                    std::to_string(probe.w.cols));
  const Matrix2D xhat = l2_normalize_rows(features);
  Matrix2D out(features.rows, probe.w.rows);
  parallel_for(out.rows, [&](std::size_t r) {
    const double* x = xhat.row(r);
    double* dst = out.row(r);
    for (std::size_t c = 0; c < probe.w.rows; ++c) {
      double a = probe.b[c];
      const double* wc = probe.w.row(c);
      for (std::size_t k = 0; k < probe.w.cols; ++k) a += wc[k] * x[k];
      dst[c] = a;
    }
  });
  return out;
}

void probe_save(const LinearProbe& probe, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["type"] = "probe";
  doc["backbone"] = probe.backbone;
  doc["classes"] = probe.w.rows;
  doc["feature_dim"] = probe.w.cols;
  doc["params"] = {{"w", encode_f32_blob(probe.w.values)}, {"b", encode_f32_blob(probe.b)}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io_failure, "cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

LinearProbe probe_load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io_failure, "cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::schema_violation, path.string() + ": invalid JSON: " + e.what());
  }
  if (!doc.is_object() || doc.value("type", "") != "probe")
    throw Error(ErrorKind::schema_violation, path.string() + ": not a probe model file");
  LinearProbe probe;
  try {
    probe.backbone = doc.at("backbone").get<std::string>();
    const auto classes = doc.at("classes").get<std::size_t>();
    const auto dim = doc.at("feature_dim").get<std::size_t>();
    probe.w = Matrix2D(classes, dim);
    probe.w.values = decode_f32_blob(doc.at("params").at("w").get<std::string>(), classes * dim);
    probe.b = decode_f32_blob(doc.at("params").at("b").get<std::string>(), classes);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema_violation, path.string() + ": " + e.what());
  }
  return probe;
}

}  // namespace logitfuse
