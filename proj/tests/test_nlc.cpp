#include <cmath>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "logitfuse/calibration.hpp"
#include "logitfuse/learned.hpp"
#include "logitfuse/metrics.hpp"
#include "logitfuse/nlc.hpp"
#include "logitfuse/parallel.hpp"
#include "logitfuse/rng.hpp"
#include "logitfuse/scalar.hpp"

using namespace logitfuse;
using testutil::TmpDir;

namespace {

// Random model with every preactivation pushed away from the ReLU kink so
// finite differences stay on one side of it.
struct Instance {
  NlcModel model;
  LogitStack stack;
  Matrix2D features;
};

Instance safe_instance(Rng& rng, std::size_t n, std::size_t input, std::size_t hidden,
                       std::size_t backbones, std::size_t classes) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    Instance inst;
    inst.model = nlc_init(input, hidden, backbones, rng.raw());
    for (double& v : inst.model.w2) v = 0.5 * rng.normal();
    for (double& v : inst.model.b2) v = 0.3 * rng.normal();
    inst.model.normalize_features = false;  // gradcheck hits raw inputs
    inst.stack = testutil::random_stack(backbones, n, classes, rng);
    inst.features = testutil::random_matrix(n, input, rng);

    bool safe = true;
    for (std::size_t r = 0; r < n && safe; ++r) {
      for (std::size_t h = 0; h < hidden && safe; ++h) {
        double pre = inst.model.b1[h];
        for (std::size_t i = 0; i < input; ++i)
          pre += inst.model.w1[h * input + i] * inst.features.at(r, i);
        if (std::abs(pre) < 1e-3) safe = false;
      }
    }
    if (safe) return inst;
  }
  FAIL("could not build a kink-free instance");
  return {};
}

double loss_of(const NlcModel& model, const LogitStack& stack, const Matrix2D& features) {
  return nlc_loss_grad(model, stack, features, nullptr);
}

// Toy routing task: the feature cue names the backbone that is right.
void routed_problem(Rng& rng, std::size_t n, LogitStack* stack,
                    std::vector<Matrix2D>* features) {
  const std::size_t classes = 4;
  stack->names = {"bb0", "bb1"};
  stack->logits = {Matrix2D(n, classes), Matrix2D(n, classes)};
  features->assign(2, Matrix2D(n, 2));
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t y = rng.index(classes);
    const std::size_t reliable = rng.index(2);
    stack->labels.push_back(static_cast<std::int64_t>(y));
    for (std::size_t b = 0; b < 2; ++b) {
      const std::size_t target = b == reliable ? y : rng.index(classes);
      for (std::size_t c = 0; c < classes; ++c)
        stack->logits[b].at(r, c) = rng.normal() + (c == target ? 3.0 : 0.0);
    }
    (*features)[0].at(r, 0) = reliable == 0 ? 1.0 : 0.0;
    (*features)[0].at(r, 1) = reliable == 1 ? 1.0 : 0.0;
    (*features)[1].at(r, 0) = rng.normal();
    (*features)[1].at(r, 1) = rng.normal();
  }
}

}  // namespace

TEST_SUITE("nlc") {

TEST_CASE("fresh model emits temperature exactly 1 and reproduces the plain sum") {
  Rng rng(71);
  for (int iter = 0; iter < 100; ++iter) {
    const std::size_t backbones = 2 + rng.index(4);
    const std::size_t input = 3 + rng.index(8);
    const NlcModel model = nlc_init(input, 1 + rng.index(16), backbones, rng.raw());
    const std::size_t n = 1 + rng.index(12);
    const Matrix2D features = testutil::random_matrix(n, input, rng, 5.0);
    const Matrix2D temps = nlc_forward(model, features);
    for (const double t : temps.values) CHECK(t == 1.0);  // exactly

    const LogitStack stack = testutil::random_stack(backbones, n, 3 + rng.index(4), rng);
    const Matrix2D combined = nlc_combine(stack, temps);
    const Matrix2D summed = combine_fixed(stack, std::vector<double>(backbones, 1.0));
    CHECK(combined.values == summed.values);  // bitwise, not just same argmax
  }
}

TEST_CASE("zero hidden connectivity collapses to combine_fixed(softplus(b2))") {
  Rng rng(72);
  for (int iter = 0; iter < 100; ++iter) {
    const std::size_t backbones = 2 + rng.index(3);
    NlcModel model = nlc_init(5, 7, backbones, rng.raw());
    for (double& v : model.b2) v = 2.0 * (rng.uniform() - 0.5);
    // w2 stays zero; w1/b1 arbitrary garbage must not matter
    for (double& v : model.w1) v = rng.normal();
    for (double& v : model.b1) v = rng.normal();

    const std::size_t n = 1 + rng.index(10);
    const LogitStack stack = testutil::random_stack(backbones, n, 4, rng);
    const Matrix2D features = testutil::random_matrix(n, 5, rng);

    std::vector<double> temps(backbones);
    for (std::size_t b = 0; b < backbones; ++b) temps[b] = softplus(model.b2[b]);
    CHECK(nlc_combine(stack, nlc_forward(model, features)).values ==
          combine_fixed(stack, temps).values);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  Rng rng(73);
  double worst = 0.0;
  const double h = 1e-5;
  for (int iter = 0; iter < 12; ++iter) {
    Instance inst = safe_instance(rng, 6, 4, 5, 3, 3);
    NlcGrads grads;
    nlc_loss_grad(inst.model, inst.stack, inst.features, &grads);

    auto check_group = [&](std::vector<double>& params, const std::vector<double>& grad) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double keep = params[i];
        params[i] = keep + h;
        const double up = loss_of(inst.model, inst.stack, inst.features);
        params[i] = keep - h;
        const double down = loss_of(inst.model, inst.stack, inst.features);
        params[i] = keep;
        const double fd = (up - down) / (2 * h);
        const double rel = std::abs(grad[i] - fd) / std::max(1e-8, std::abs(fd));
        worst = std::max(worst, rel);
      }
    };
    check_group(inst.model.w1, grads.w1);
    check_group(inst.model.b1, grads.b1);
    check_group(inst.model.w2, grads.w2);
    check_group(inst.model.b2, grads.b2);
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("reported loss equals the cross entropy of the combined logits") {
  Rng rng(74);
  Instance inst = safe_instance(rng, 8, 4, 5, 2, 4);
  const double loss = nlc_loss_grad(inst.model, inst.stack, inst.features, nullptr);
  const Matrix2D combined =
      nlc_combine(inst.stack, nlc_forward(inst.model, inst.features));
  CHECK(loss == doctest::Approx(mean_nll(combined, inst.stack.labels, 1.0)).epsilon(1e-12));
}

TEST_CASE("temperatures stay strictly positive on extreme inputs") {
  Rng rng(75);
  NlcModel model = nlc_init(4, 6, 3, 1);
  for (double& v : model.w2) v = -5.0 * rng.uniform();  // push toward softplus(-inf)
  for (double& v : model.b2) v = -40.0;
  const Matrix2D features = testutil::random_matrix(5, 4, rng, 100.0);
  const Matrix2D temps = nlc_forward(model, features);
  for (const double t : temps.values) CHECK(t > 0.0);
}

TEST_CASE("per-block normalization makes forward scale-invariant") {
  Rng rng(76);
  NlcModel model = nlc_init(6, 8, 2, 2);
  for (double& v : model.w2) v = rng.normal();
  model.feature_dims = {4, 2};
  model.normalize_features = true;

  Matrix2D features = testutil::random_matrix(3, 6, rng);
  Matrix2D scaled = features;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) scaled.at(r, c) *= 16.0;  // power of two: exact
  CHECK(nlc_forward(model, features).values == nlc_forward(model, scaled).values);

  model.normalize_features = false;
  CHECK(nlc_forward(model, features).values != nlc_forward(model, scaled).values);
}

TEST_CASE("training learns the routing cue") {
  Rng rng(77);
  LogitStack stack;
  std::vector<Matrix2D> features;
  routed_problem(rng, 900, &stack, &features);

  NlcTrainConfig cfg;
  cfg.hidden_dim = 16;
  cfg.epochs = 60;
  cfg.batch_size = 64;
  cfg.learning_rate = 2e-3;
  cfg.patience = 60;
  cfg.seed = 5;
  NlcHistory history;
  const NlcModel model = nlc_train(stack, features, cfg, &history);

  const Matrix2D all = concat_features(features);
  const double trained = accuracy(nlc_combine(stack, nlc_forward(model, all)), stack.labels);
  const double at_init =
      accuracy(combine_fixed(stack, std::vector<double>(2, 1.0)), stack.labels);
  double best_single = 0.0;
  for (const auto& block : stack.logits)
    best_single = std::max(best_single, accuracy(block, stack.labels));

  CHECK(trained > at_init);
  CHECK(trained > best_single);
  CHECK(history.best_epoch < history.holdout_acc.size());
  double best_seen = 0.0;
  for (const double a : history.holdout_acc) best_seen = std::max(best_seen, a);
  CHECK(history.holdout_acc[history.best_epoch] == best_seen);
}

TEST_CASE("training is deterministic across seeds and thread counts") {
  Rng rng(78);
  LogitStack stack;
  std::vector<Matrix2D> features;
  routed_problem(rng, 200, &stack, &features);
  NlcTrainConfig cfg;
  cfg.hidden_dim = 8;
  cfg.epochs = 8;
  cfg.batch_size = 32;
  cfg.seed = 11;

  const int before = max_threads();
  set_max_threads(1);
  const NlcModel a = nlc_train(stack, features, cfg);
  set_max_threads(4);
  const NlcModel b = nlc_train(stack, features, cfg);
  set_max_threads(before);
  CHECK(a.w1 == b.w1);
  CHECK(a.b1 == b.b1);
  CHECK(a.w2 == b.w2);
  CHECK(a.b2 == b.b2);
}

TEST_CASE("save/load: float32 quantization is a fixed point, forward is stable") {
  TmpDir dir("nlc");
  Rng rng(79);
  LogitStack stack;
  std::vector<Matrix2D> features;
  routed_problem(rng, 150, &stack, &features);
  NlcTrainConfig cfg;
  cfg.hidden_dim = 8;
  cfg.epochs = 4;
  cfg.batch_size = 32;
  cfg.seed = 3;
  const NlcModel trained = nlc_train(stack, features, cfg);

  nlc_save(trained, dir / "m1.json");
  const NlcModel m1 = nlc_load(dir / "m1.json");
  nlc_save(m1, dir / "m2.json");
  const NlcModel m2 = nlc_load(dir / "m2.json");

  // one quantization round settles the bytes for good
  CHECK(testutil::same_bytes(dir / "m1.json", dir / "m2.json"));
  CHECK(m1.w1 == m2.w1);
  CHECK(m1.b2 == m2.b2);
  CHECK(m1.backbone_names == trained.backbone_names);
  CHECK(m1.feature_dims == trained.feature_dims);
  CHECK(m1.normalize_features == trained.normalize_features);

  const Matrix2D all = concat_features(features);
  CHECK(nlc_forward(m1, all).values == nlc_forward(m2, all).values);
}

TEST_CASE("model file guards") {
  TmpDir dir("nlc");
  const NlcModel model = nlc_init(6, 4, 2, 1);
  NlcModel tagged = model;
  tagged.backbone_names = {"a", "b"};
  tagged.feature_dims = {3, 3};
  nlc_save(tagged, dir / "m.json");

  nlohmann::json doc;
  std::ifstream(dir / "m.json") >> doc;
  doc["feature_dims"] = {3, 4};  // sum no longer matches input_dim
  std::ofstream(dir / "bad.json") << doc.dump();
  try {
    nlc_load(dir / "bad.json");
    FAIL("expected DimMismatchOnLoad");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dim_mismatch_on_load);
  }

  doc = nlohmann::json();
  std::ifstream(dir / "m.json") >> doc;
  doc.erase("params");
  std::ofstream(dir / "noparams.json") << doc.dump();
  CHECK_THROWS_AS(nlc_load(dir / "noparams.json"), Error);

  // predict-time mismatch: names in a different order
  try {
    check_model_matches(tagged, {"b", "a"}, 6);
    FAIL("expected DimMismatchOnLoad");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dim_mismatch_on_load);
  }
  CHECK_THROWS_AS(check_model_matches(tagged, {"a", "b"}, 7), Error);
  CHECK_NOTHROW(check_model_matches(tagged, {"a", "b"}, 6));
}

TEST_CASE("train config validation and data guards") {
  Rng rng(80);
  LogitStack stack;
  std::vector<Matrix2D> features;
  routed_problem(rng, 40, &stack, &features);

  NlcTrainConfig cfg;
  cfg.seed = 1;
  cfg.holdout_fraction = 1.5;
  CHECK_THROWS_AS(nlc_train(stack, features, cfg), Error);
  cfg = NlcTrainConfig{};
  cfg.epochs = 0;
  CHECK_THROWS_AS(nlc_train(stack, features, cfg), Error);
  cfg = NlcTrainConfig{};
  CHECK_THROWS_AS(nlc_train(stack, {}, cfg), Error);
  CHECK_THROWS_AS(nlc_train(LogitStack{}, features, cfg), Error);
}

TEST_CASE("concat_features lays blocks out side by side") {
  Matrix2D a(2, 2), b(2, 1);
  a.values = {1, 2, 3, 4};
  b.values = {9, 8};
  const Matrix2D cat = concat_features({a, b});
  CHECK(cat.rows == 2);
  CHECK(cat.cols == 3);
  CHECK(cat.values == std::vector<double>{1, 2, 9, 3, 4, 8});
  Matrix2D ragged(3, 1);
  CHECK_THROWS_AS(concat_features({a, ragged}), Error);
}

}  // TEST_SUITE
