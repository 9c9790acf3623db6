#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "logitfuse/types.hpp"

namespace logitfuse {

// One-hidden-layer controller: t = softplus(W2 relu(W1 x + b1) + b2).
// Temperatures weight the per-backbone logits in a sum, so the controller
// decides per example how much each backbone contributes.
struct NlcModel {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t output_dim = 0;  // = number of backbones
  std::vector<double> w1;      // hidden x input, row-major
  std::vector<double> b1;      // hidden
  std::vector<double> w2;      // output x hidden, row-major
  std::vector<double> b2;      // output
  bool normalize_features = true;          // per-backbone L2 on input blocks
  std::vector<std::size_t> feature_dims;   // block widths; empty = single block
  std::vector<std::string> backbone_names; // order contract with the bundle

  std::size_t param_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size();
  }
};

struct NlcTrainConfig {
  double learning_rate = 2e-4;
  double weight_decay = 0.01;
  bool decoupled_decay = true;  // AdamW-style; false folds decay into the gradient
  std::size_t hidden_dim = 128;
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  std::size_t patience = 20;
  double holdout_fraction = 0.1;
  bool normalize_features = true;
  std::uint64_t seed = 0;
};

struct NlcGrads {
  std::vector<double> w1, b1, w2, b2;
};

struct NlcHistory {
  std::vector<double> train_loss;   // per epoch, mean over batches
  std::vector<double> holdout_acc;  // per epoch
  std::size_t best_epoch = 0;
};

// W1 fan-in scaled, W2 = 0, b2 = softplus^-1(1): the fresh model emits
// temperature exactly 1 for every backbone on any input, so its predictions
// coincide with the unweighted logit sum from step zero.
NlcModel nlc_init(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim,
                  std::uint64_t seed);

// N x input_dim features -> N x output_dim strictly positive temperatures.
Matrix2D nlc_forward(const NlcModel& model, const Matrix2D& features);

// z*_i = sum_b t_{i,b} z^b_i.
Matrix2D nlc_combine(const LogitStack& stack, const Matrix2D& temps);

// Mean cross-entropy of softmax(nlc_combine) plus exact backprop. Weight
// decay is applied at the update step, never inside the reported loss.
double nlc_loss_grad(const NlcModel& model, const LogitStack& batch, const Matrix2D& features,
                     NlcGrads* grads);

// Stratified fit/holdout split, minibatch adaptive-moment updates, early
// stopping on holdout accuracy; returns the best-holdout checkpoint.
NlcModel nlc_train(const LogitStack& train_stack, const std::vector<Matrix2D>& train_features,
                   const NlcTrainConfig& cfg, NlcHistory* history = nullptr);

void nlc_save(const NlcModel& model, const std::filesystem::path& path);
NlcModel nlc_load(const std::filesystem::path& path);

// Predict-time guard: model backbone names/dims must match the bundle's.
void check_model_matches(const NlcModel& model, const std::vector<std::string>& backbone_names,
                         std::size_t concat_feature_dim);

// Concatenates per-backbone feature blocks row-wise (no normalization; the
// model applies its own flag in forward).
Matrix2D concat_features(const std::vector<Matrix2D>& blocks);

}  // namespace logitfuse
