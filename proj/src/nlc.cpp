#include "logitfuse/nlc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "logitfuse/adam.hpp"
#include "logitfuse/blob.hpp"
#include "logitfuse/metrics.hpp"
#include "logitfuse/parallel.hpp"
#include "logitfuse/probe.hpp"
#include "logitfuse/rng.hpp"
#include "logitfuse/scalar.hpp"

namespace logitfuse {

namespace {

// L2-normalize the model's feature blocks in place; zero blocks pass through.
void normalize_row(const NlcModel& model, double* x) {
  if (!model.normalize_features) return;
  std::size_t offset = 0;
  const std::size_t blocks = model.feature_dims.empty() ? 1 : model.feature_dims.size();
  for (std::size_t k = 0; k < blocks; ++k) {
    const std::size_t width = model.feature_dims.empty() ? model.input_dim : model.feature_dims[k];
    double sq = 0.0;
    for (std::size_t d = 0; d < width; ++d) sq += x[offset + d] * x[offset + d];
    if (sq > 0.0) {
      const double inv = 1.0 / std::sqrt(sq);
      for (std::size_t d = 0; d < width; ++d) x[offset + d] *= inv;
    }
    offset += width;
  }
}

void check_dims(const NlcModel& model) {
  if (model.w1.size() != model.hidden_dim * model.input_dim ||
      model.b1.size() != model.hidden_dim ||
      model.w2.size() != model.output_dim * model.hidden_dim ||
      model.b2.size() != model.output_dim)
    throw Error(ErrorKind::shape_mismatch, "NLC parameter shapes are inconsistent");
  if (!model.feature_dims.empty()) {
    std::size_t total = 0;
    for (const std::size_t d : model.feature_dims) total += d;
    if (total != model.input_dim)
      throw Error(ErrorKind::dim_mismatch_on_load,
                  "feature block widths sum to " + std::to_string(total) + ", input_dim is " +
                      std::to_string(model.input_dim));
  }
}

}  // namespace

NlcModel nlc_init(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim,
                  std::uint64_t seed) {
  if (input_dim < 1 || hidden_dim < 1 || output_dim < 1)
    throw Error(ErrorKind::shape_mismatch, "NLC dims must be >= 1");
  NlcModel model;
  model.input_dim = input_dim;
  model.hidden_dim = hidden_dim;
  model.output_dim = output_dim;
  model.w1.resize(hidden_dim * input_dim);
  model.b1.assign(hidden_dim, 0.0);
  // W2 = 0 keeps the init temperatures input-independent, which is what makes
  // the fresh model coincide with the unweighted sum exactly (not just
  // approximately); training immediately breaks the symmetry through W2's
  // nonzero gradient.
  model.w2.assign(output_dim * hidden_dim, 0.0);

  Rng rng(seed);
  const double scale = std::sqrt(2.0 / static_cast<double>(input_dim));
  for (auto& w : model.w1) w = scale * rng.normal();

  // b2 = the double whose softplus rounds to exactly 1.0, searched from
  // ln(e-1); softplus(b2 + W2 h) == 1.0 bitwise at init.
  double b2 = std::log(std::expm1(1.0));
  for (int i = 0; i < 64 && softplus(b2) != 1.0; ++i)
    b2 = std::nextafter(b2, softplus(b2) > 1.0 ? -HUGE_VAL : HUGE_VAL);
  model.b2.assign(output_dim, b2);
  return model;
}

Matrix2D nlc_forward(const NlcModel& model, const Matrix2D& features) {
  check_dims(model);
  if (features.cols != model.input_dim)
    throw Error(ErrorKind::shape_mismatch,
                "feature width " + std::to_string(features.cols) + ", model input_dim " +
                    std::to_string(model.input_dim));
  Matrix2D temps(features.rows, model.output_dim);
  parallel_for(features.rows, [&](std::size_t r) {
    std::vector<double> x(features.row(r), features.row(r) + features.cols);
    normalize_row(model, x.data());
    std::vector<double> h(model.hidden_dim);
    for (std::size_t j = 0; j < model.hidden_dim; ++j) {
      double a = model.b1[j];
      const double* w = model.w1.data() + j * model.input_dim;
      for (std::size_t d = 0; d < model.input_dim; ++d) a += w[d] * x[d];
      h[j] = a > 0.0 ? a : 0.0;
    }
    double* t = temps.row(r);
    for (std::size_t k = 0; k < model.output_dim; ++k) {
      double a = model.b2[k];
      const double* w = model.w2.data() + k * model.hidden_dim;
      for (std::size_t j = 0; j < model.hidden_dim; ++j) a += w[j] * h[j];
      t[k] = softplus(a);
    }
  });
  return temps;
}

Matrix2D nlc_combine(const LogitStack& stack, const Matrix2D& temps) {
  if (stack.logits.empty()) throw Error(ErrorKind::empty_list, "logit stack has no backbones");
  const std::size_t b = stack.logits.size();
  const std::size_t rows = stack.logits[0].rows;
  const std::size_t cols = stack.logits[0].cols;
  for (const auto& block : stack.logits)
    if (block.rows != rows || block.cols != cols)
      throw Error(ErrorKind::shape_mismatch, "logit stack blocks differ in shape");
  if (temps.rows != rows || temps.cols != b)
    throw Error(ErrorKind::shape_mismatch,
                "temperature matrix is " + std::to_string(temps.rows) + "x" +
                    std::to_string(temps.cols) + ", stack wants " + std::to_string(rows) + "x" +
                    std::to_string(b));
  Matrix2D out(rows, cols);
  parallel_for(rows, [&](std::size_t r) {
    double* dst = out.row(r);
    const double* t = temps.row(r);
    for (std::size_t k = 0; k < b; ++k) {
      const double* src = stack.logits[k].row(r);
      for (std::size_t c = 0; c < cols; ++c) dst[c] += t[k] * src[c];
    }
  });
  return out;
}

double nlc_loss_grad(const NlcModel& model, const LogitStack& batch, const Matrix2D& features,
                     NlcGrads* grads) {
  check_dims(model);
  if (batch.logits.empty()) throw Error(ErrorKind::empty_list, "empty batch stack");
  const std::size_t n = batch.logits[0].rows;
  const std::size_t cols = batch.logits[0].cols;
  const std::size_t nb = batch.logits.size();
  if (nb != model.output_dim)
    throw Error(ErrorKind::shape_mismatch, "stack backbone count does not match output_dim");
  if (features.rows != n || features.cols != model.input_dim)
    throw Error(ErrorKind::shape_mismatch, "feature batch shape mismatch");
  if (batch.labels.size() != n)
    throw Error(ErrorKind::shape_mismatch, "label batch length mismatch");
  if (n == 0) throw Error(ErrorKind::empty_split, "loss over zero examples");

  const std::size_t hid = model.hidden_dim;
  const std::size_t dim = model.input_dim;

  // forward intermediates, one row per example
  Matrix2D xhat = features;
  Matrix2D h(n, hid);
  Matrix2D sig(n, nb);   // softplus'(a2)
  Matrix2D temps(n, nb);
  std::vector<double> row_loss(n);
  Matrix2D da2(n, nb);

  parallel_for(n, [&](std::size_t r) {
    double* x = xhat.row(r);
    normalize_row(model, x);
    double* hr = h.row(r);
    for (std::size_t j = 0; j < hid; ++j) {
      double a = model.b1[j];
      const double* w = model.w1.data() + j * dim;
      for (std::size_t d = 0; d < dim; ++d) a += w[d] * x[d];
      hr[j] = a > 0.0 ? a : 0.0;
    }
    for (std::size_t k = 0; k < nb; ++k) {
      double a = model.b2[k];
      const double* w = model.w2.data() + k * hid;
      for (std::size_t j = 0; j < hid; ++j) a += w[j] * hr[j];
      temps.at(r, k) = softplus(a);
      sig.at(r, k) = sigmoid(a);
    }
    // combined logits, softmax, per-row loss and dL/dt -> da2
    std::vector<double> z(cols, 0.0);
    for (std::size_t k = 0; k < nb; ++k) {
      const double* src = batch.logits[k].row(r);
      const double t = temps.at(r, k);
      for (std::size_t c = 0; c < cols; ++c) z[c] += t * src[c];
    }
    double max_v = z[0];
    for (std::size_t c = 1; c < cols; ++c) max_v = std::max(max_v, z[c]);
    std::vector<double> p(cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      p[c] = std::exp(z[c] - max_v);
      sum += p[c];
    }
    const auto y = static_cast<std::size_t>(batch.labels[r]);
    row_loss[r] = std::log(sum) - (z[y] - max_v);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t c = 0; c < cols; ++c) p[c] = p[c] / sum;
    p[y] -= 1.0;
    for (std::size_t k = 0; k < nb; ++k) {
      const double* src = batch.logits[k].row(r);
      double dt = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dt += p[c] * src[c];
      da2.at(r, k) = dt * inv_n * sig.at(r, k);
    }
  });

  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) loss += row_loss[r];
  loss /= static_cast<double>(n);
  if (!std::isfinite(loss)) throw Error(ErrorKind::non_finite_loss, "NLC loss diverged");
  if (!grads) return loss;

  grads->w1.assign(hid * dim, 0.0);
  grads->b1.assign(hid, 0.0);
  grads->w2.assign(nb * hid, 0.0);
  grads->b2.assign(nb, 0.0);

  // parameter-cell reductions keep a fixed example order, so gradients are
  // bit-identical whatever the thread count
  parallel_for(nb, [&](std::size_t k) {
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) acc += da2.at(r, k);
    grads->b2[k] = acc;
  });
  parallel_for(nb * hid, [&](std::size_t cell) {
    const std::size_t k = cell / hid;
    const std::size_t j = cell % hid;
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) acc += da2.at(r, k) * h.at(r, j);
    grads->w2[cell] = acc;
  });

  Matrix2D da1(n, hid);
  parallel_for(n, [&](std::size_t r) {
    double* dst = da1.row(r);
    for (std::size_t j = 0; j < hid; ++j) {
      if (h.at(r, j) <= 0.0) {
        dst[j] = 0.0;
        continue;
      }
      double acc = 0.0;
      for (std::size_t k = 0; k < nb; ++k) acc += model.w2[k * hid + j] * da2.at(r, k);
      dst[j] = acc;
    }
  });
  parallel_for(hid, [&](std::size_t j) {
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) acc += da1.at(r, j);
    grads->b1[j] = acc;
  });
  parallel_for(hid * dim, [&](std::size_t cell) {
    const std::size_t j = cell / dim;
    const std::size_t d = cell % dim;
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) acc += da1.at(r, j) * xhat.at(r, d);
    grads->w1[cell] = acc;
  });
  return loss;
}

namespace {

LogitStack gather_stack(const LogitStack& stack, const std::vector<std::size_t>& idx) {
  LogitStack out;
  out.names = stack.names;
  out.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out.labels[i] = stack.labels[idx[i]];
  for (const auto& block : stack.logits) {
    Matrix2D g(idx.size(), block.cols);
    parallel_for(idx.size(), [&](std::size_t i) {
      const double* src = block.row(idx[i]);
      std::copy(src, src + block.cols, g.row(i));
    });
    out.logits.push_back(std::move(g));
  }
  return out;
}

}  // namespace

NlcModel nlc_train(const LogitStack& train_stack, const std::vector<Matrix2D>& train_features,
                   const NlcTrainConfig& cfg, NlcHistory* history) {
  if (cfg.holdout_fraction <= 0.0 || cfg.holdout_fraction >= 1.0)
    throw Error(ErrorKind::schema_violation, "holdout_fraction must lie in (0, 1)");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.hidden_dim < 1 || cfg.learning_rate <= 0.0)
    throw Error(ErrorKind::schema_violation, "NLC config values must be positive");
  if (train_stack.logits.empty()) throw Error(ErrorKind::empty_list, "empty training stack");
  if (train_features.size() != train_stack.logits.size())
    throw Error(ErrorKind::missing_features,
                std::to_string(train_features.size()) + " feature blocks for " +
                    std::to_string(train_stack.logits.size()) + " backbones");
  const std::size_t n = train_stack.labels.size();
  if (n == 0) throw Error(ErrorKind::empty_split, "training split is empty");

  const Matrix2D all_features = concat_features(train_features);
  if (all_features.rows != n)
    throw Error(ErrorKind::length_mismatch, "feature rows do not match label count");

  std::vector<std::size_t> everything(n);
  for (std::size_t i = 0; i < n; ++i) everything[i] = i;
  auto [fit_idx, hold_idx] =
      holdout_split(everything, train_stack.labels, cfg.holdout_fraction, mix_seed(cfg.seed, 1));
  // 1-shot-style data can leave no holdout (every class a singleton); fall
  // back to scoring on the fit set so early stopping still has a signal
  if (hold_idx.empty()) hold_idx = fit_idx;

  const LogitStack fit_stack = gather_stack(train_stack, fit_idx);
  const Matrix2D fit_features = gather_rows(all_features, fit_idx);
  const LogitStack hold_stack = gather_stack(train_stack, hold_idx);
  const Matrix2D hold_features = gather_rows(all_features, hold_idx);

  NlcModel model = nlc_init(all_features.cols, cfg.hidden_dim, train_stack.logits.size(),
                            mix_seed(cfg.seed, 2));
  model.normalize_features = cfg.normalize_features;
  model.backbone_names = train_stack.names;
  for (const auto& block : train_features) model.feature_dims.push_back(block.cols);

  Adam opt_w1(model.w1.size(), cfg.learning_rate, cfg.weight_decay, cfg.decoupled_decay);
  Adam opt_b1(model.b1.size(), cfg.learning_rate, cfg.weight_decay, cfg.decoupled_decay);
  Adam opt_w2(model.w2.size(), cfg.learning_rate, cfg.weight_decay, cfg.decoupled_decay);
  Adam opt_b2(model.b2.size(), cfg.learning_rate, cfg.weight_decay, cfg.decoupled_decay);

  NlcModel best = model;
  double best_acc = -1.0;
  std::size_t best_epoch = 0;
  if (history) *history = NlcHistory{};

  const std::size_t n_fit = fit_idx.size();
  std::vector<std::size_t> order(n_fit);
  for (std::size_t i = 0; i < n_fit; ++i) order[i] = i;
  NlcGrads grads;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 1000 + epoch));
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_fit; start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, n_fit);
      const std::vector<std::size_t> batch_idx(order.begin() + start, order.begin() + stop);
      const LogitStack batch = gather_stack(fit_stack, batch_idx);
      const Matrix2D batch_features = gather_rows(fit_features, batch_idx);
      const double loss = nlc_loss_grad(model, batch, batch_features, &grads);
      epoch_loss += loss * static_cast<double>(batch_idx.size());
      opt_w1.step(model.w1, grads.w1);
      opt_b1.step(model.b1, grads.b1);
      opt_w2.step(model.w2, grads.w2);
      opt_b2.step(model.b2, grads.b2);
    }
    epoch_loss /= static_cast<double>(n_fit);

    const Matrix2D hold_temps = nlc_forward(model, hold_features);
    const double acc = accuracy(top1(nlc_combine(hold_stack, hold_temps)), hold_stack.labels);
    if (history) {
      history->train_loss.push_back(epoch_loss);
      history->holdout_acc.push_back(acc);
    }
    if (acc > best_acc) {
      best_acc = acc;
      best = model;
      best_epoch = epoch;
    }
    if (epoch - best_epoch >= cfg.patience) break;
  }
  if (history) history->best_epoch = best_epoch;
  return best;
}

void nlc_save(const NlcModel& model, const std::filesystem::path& path) {
  check_dims(model);
  nlohmann::json doc;
  doc["type"] = "nlc";
  doc["input_dim"] = model.input_dim;
  doc["hidden_dim"] = model.hidden_dim;
  doc["output_dim"] = model.output_dim;
  doc["normalize_features"] = model.normalize_features;
  doc["feature_dims"] = model.feature_dims;
  doc["backbones"] = model.backbone_names;
  doc["params"] = {{"w1", encode_f32_blob(model.w1)},
                   {"b1", encode_f32_blob(model.b1)},
                   {"w2", encode_f32_blob(model.w2)},
                   {"b2", encode_f32_blob(model.b2)}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io_failure, "cannot write " + path.string());
  out << doc.dump(2) << "\n";
  if (!out) throw Error(ErrorKind::io_failure, "short write to " + path.string());
}

NlcModel nlc_load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io_failure, "cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::schema_violation, path.string() + ": invalid JSON: " + e.what());
  }
  if (!doc.is_object() || doc.value("type", "") != "nlc")
    throw Error(ErrorKind::schema_violation, path.string() + ": not an nlc model file");
  NlcModel model;
  try {
    model.input_dim = doc.at("input_dim").get<std::size_t>();
    model.hidden_dim = doc.at("hidden_dim").get<std::size_t>();
    model.output_dim = doc.at("output_dim").get<std::size_t>();
    model.normalize_features = doc.at("normalize_features").get<bool>();
    model.feature_dims = doc.at("feature_dims").get<std::vector<std::size_t>>();
    model.backbone_names = doc.at("backbones").get<std::vector<std::string>>();
    const auto& params = doc.at("params");
    model.w1 = decode_f32_blob(params.at("w1").get<std::string>(),
                               model.hidden_dim * model.input_dim);
    model.b1 = decode_f32_blob(params.at("b1").get<std::string>(), model.hidden_dim);
    model.w2 = decode_f32_blob(params.at("w2").get<std::string>(),
                               model.output_dim * model.hidden_dim);
    model.b2 = decode_f32_blob(params.at("b2").get<std::string>(), model.output_dim);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema_violation, path.string() + ": " + e.what());
  }
  if (model.backbone_names.size() != model.output_dim)
    throw Error(ErrorKind::dim_mismatch_on_load,
                path.string() + ": backbone list does not match output_dim");
  check_dims(model);
  return model;
}

void check_model_matches(const NlcModel& model, const std::vector<std::string>& backbone_names,
                         std::size_t concat_feature_dim) {
  if (backbone_names != model.backbone_names) {
    std::string want, have;
    for (const auto& n : model.backbone_names) want += (want.empty() ? "" : ",") + n;
    for (const auto& n : backbone_names) have += (have.empty() ? "" : ",") + n;
    throw Error(ErrorKind::dim_mismatch_on_load,
                "model was trained on backbones [" + want + "], bundle provides [" + have + "]");
  }
  if (concat_feature_dim != model.input_dim)
    throw Error(ErrorKind::dim_mismatch_on_load,
                "bundle features concatenate to " + std::to_string(concat_feature_dim) +
                    ", model input_dim is " + std::to_string(model.input_dim));
}

Matrix2D concat_features(const std::vector<Matrix2D>& blocks) {
  if (blocks.empty()) throw Error(ErrorKind::empty_list, "no feature blocks to concatenate");
  const std::size_t rows = blocks[0].rows;
  std::size_t total = 0;
  for (const auto& block : blocks) {
    if (block.rows != rows)
      throw Error(ErrorKind::length_mismatch, "feature blocks differ in row count");
    total += block.cols;
  }
  Matrix2D out(rows, total);
  parallel_for(rows, [&](std::size_t r) {
    double* dst = out.row(r);
    for (const auto& block : blocks) {
      const double* src = block.row(r);
      dst = std::copy(src, src + block.cols, dst);
    }
  });
  return out;
}

}  // namespace logitfuse
