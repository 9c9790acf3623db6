#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "logitfuse/ensembles.hpp"
#include "logitfuse/metrics.hpp"
#include "logitfuse/synth.hpp"

using namespace logitfuse;
using testutil::TmpDir;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.classes = 6;
  cfg.n_train = 400;
  cfg.n_test = 200;
  cfg.n_val = 100;
  cfg.backbones = 3;
  cfg.acc = {0.6, 0.7, 0.8};
  cfg.rho = 0.5;
  cfg.seed = 7;
  return cfg;
}

std::vector<CorrectnessMask> split_masks(const DatasetBundle& bundle, const std::string& split) {
  const LogitStack stack = load_stack(bundle, split);
  std::vector<CorrectnessMask> masks;
  for (std::size_t k = 0; k < stack.logits.size(); ++k)
    masks.push_back(correctness_mask(stack.names[k], stack.logits[k], stack.labels));
  return masks;
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("bundle layout: splits, backbones, shapes, validation") {
  TmpDir dir("synth_layout");
  const DatasetBundle bundle = synth_generate(small_config(), dir.path());
  CHECK(bundle.splits == std::vector<std::string>{"train", "val", "test"});
  CHECK(bundle.num_classes == 6);
  CHECK(bundle.backbones.size() == 3);
  CHECK(bundle.backbones[0].name == "bb0");
  CHECK(bundle.backbones[0].gflops == doctest::Approx(10.0));
  CHECK(bundle.backbones[2].gflops == doctest::Approx(30.0));
  CHECK(validate_bundle(bundle).ok());

  const LogitStack stack = load_stack(bundle, "val");
  CHECK(stack.labels.size() == 100);
  CHECK(stack.logits[0].cols == 6);
  const std::vector<Matrix2D> features = load_feature_stack(bundle, "test");
  CHECK(features.size() == 3);
  CHECK(features[1].rows == 200);
  CHECK(features[1].cols == 5);
}

TEST_CASE("no val split when n_val is zero") {
  TmpDir dir("synth_noval");
  SynthConfig cfg = small_config();
  cfg.n_val = 0;
  const DatasetBundle bundle = synth_generate(cfg, dir.path());
  CHECK(bundle.splits == std::vector<std::string>{"train", "test"});
  CHECK_FALSE(bundle.has_split("val"));
}

TEST_CASE("marginal accuracies track the targets") {
  TmpDir dir("synth_marginals");
  // Monte Carlo check over a grid of (p, rho); with n = 20000 a true marginal
  // of p has std error <= 0.5/sqrt(n) ~ 0.0035, so 0.02 is a lenient gate.
  for (const double rho : {0.0, 0.5, 1.0}) {
    SynthConfig cfg;
    cfg.classes = 8;
    cfg.n_train = 20000;
    cfg.n_test = 10;
    cfg.backbones = 3;
    cfg.acc = {0.3, 0.55, 0.85};
    cfg.rho = rho;
    cfg.seed = 11;
    const DatasetBundle bundle =
        synth_generate(cfg, dir / ("rho" + std::to_string(static_cast<int>(rho * 10))));
    const LogitStack stack = load_stack(bundle, "train");
    for (std::size_t k = 0; k < 3; ++k) {
      const double acc = accuracy(stack.logits[k], stack.labels);
      CHECK(std::abs(acc - cfg.acc[k]) < 0.02);
    }
  }
}

TEST_CASE("byte-identical regeneration for identical configs") {
  TmpDir a("synth_det_a");
  TmpDir b("synth_det_b");
  const SynthConfig cfg = small_config();
  synth_generate(cfg, a.path());
  synth_generate(cfg, b.path());
  for (const auto& entry : std::filesystem::directory_iterator(a.path())) {
    const auto name = entry.path().filename();
    CHECK(std::filesystem::exists(b / name.string()));
    if (entry.path().extension() == ".npy")
      CHECK(testutil::same_bytes(entry.path(), b / name.string()));
  }

  TmpDir c("synth_det_c");
  SynthConfig other = cfg;
  other.seed = 8;
  synth_generate(other, c.path());
  CHECK_FALSE(testutil::same_bytes(a / "labels_train.npy", c / "labels_train.npy"));
}

TEST_CASE("rho=1 with matched rates gives a perfect oracle and high diversity") {
  TmpDir dir("synth_rho1");
  SynthConfig cfg;
  cfg.classes = 10;
  cfg.n_train = 6000;
  cfg.n_test = 100;
  cfg.backbones = 3;
  // B * p < 1 would leave r_hi < 1; p = 1/3 puts the designated backbone at
  // r_hi = 1 exactly, so some backbone is right on every routed example.
  cfg.acc = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  cfg.rho = 1.0;
  cfg.seed = 13;
  const DatasetBundle bundle = synth_generate(cfg, dir.path());
  const std::vector<CorrectnessMask> masks = split_masks(bundle, "train");
  CHECK(oracle_accuracy(masks) == 1.0);
  CHECK(diversity(masks) >= 0.6);
}

TEST_CASE("diversity grows with rho") {
  TmpDir dir("synth_div");
  auto diversity_at = [&](double rho) {
    SynthConfig cfg;
    cfg.classes = 10;
    cfg.n_train = 8000;
    cfg.n_test = 10;
    cfg.backbones = 3;
    cfg.acc = {0.7, 0.7, 0.7};
    cfg.rho = rho;
    cfg.seed = 17;
    const DatasetBundle bundle =
        synth_generate(cfg, dir / ("r" + std::to_string(static_cast<int>(rho * 10))));
    return diversity(split_masks(bundle, "train"));
  };
  CHECK(diversity_at(0.1) < diversity_at(0.9));
}

TEST_CASE("logit margin matches the config") {
  TmpDir dir("synth_margin");
  SynthConfig cfg = small_config();
  cfg.margin = 2.5;
  cfg.n_train = 50;
  cfg.n_val = 0;
  const DatasetBundle bundle = synth_generate(cfg, dir.path());
  const LogitStack stack = load_stack(bundle, "train");
  for (const auto& block : stack.logits)
    for (std::size_t r = 0; r < block.rows; ++r) {
      const double* z = block.row(r);
      double best = z[0], second = -1e300;
      for (std::size_t c = 1; c < block.cols; ++c) {
        if (z[c] > best) {
          second = best;
          best = z[c];
        } else if (z[c] > second) {
          second = z[c];
        }
      }
      // logits live as float32 on disk, so the gap is exact only to f4 ulps
      CHECK(best - second == doctest::Approx(2.5).epsilon(1e-6));
    }
}

TEST_CASE("config validation") {
  TmpDir dir("synth_bad");
  SynthConfig cfg = small_config();

  SynthConfig p0 = cfg;
  p0.acc = {0.0, 0.7, 0.8};
  try {
    synth_generate(p0, dir.path());
    FAIL("expected InfeasibleRates");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::infeasible_rates);
  }

  SynthConfig p1 = cfg;
  p1.acc = {0.6, 1.0, 0.8};
  CHECK_THROWS_AS(synth_generate(p1, dir.path()), Error);

  SynthConfig short_acc = cfg;
  short_acc.acc = {0.6, 0.7};
  try {
    synth_generate(short_acc, dir.path());
    FAIL("expected LengthMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::length_mismatch);
  }

  SynthConfig one_class = cfg;
  one_class.classes = 1;
  try {
    synth_generate(one_class, dir.path());
    FAIL("expected TooFewClasses");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::too_few_classes);
  }

  SynthConfig narrow = cfg;
  narrow.feature_dim = 2;  // cue needs one slot per backbone
  try {
    synth_generate(narrow, dir.path());
    FAIL("expected SchemaViolation");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::schema_violation);
  }

  SynthConfig bad_rho = cfg;
  bad_rho.rho = 1.2;
  CHECK_THROWS_AS(synth_generate(bad_rho, dir.path()), Error);
}

}  // TEST_SUITE
