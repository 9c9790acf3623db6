#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "logitfuse/metrics.hpp"
#include "logitfuse/probe.hpp"
#include "logitfuse/rng.hpp"

using namespace logitfuse;
using testutil::TmpDir;

namespace {

// Well-separated class blobs; linearly separable after L2 normalization.
void blob_problem(Rng& rng, std::size_t n, std::size_t classes, std::size_t dim,
                  Matrix2D* features, LabelVector* labels) {
  *features = Matrix2D(n, dim);
  labels->clear();
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t y = rng.index(classes);
    labels->push_back(static_cast<std::int64_t>(y));
    for (std::size_t c = 0; c < dim; ++c)
      features->at(r, c) = 0.3 * rng.normal() + (c == y ? 3.0 : 0.0);
  }
}

}  // namespace

TEST_SUITE("probe") {

TEST_CASE("sample_shots draws exactly n per class, sorted, seed-stable") {
  Rng rng(81);
  LabelVector labels;
  for (int i = 0; i < 200; ++i) labels.push_back(static_cast<std::int64_t>(rng.index(5)));

  const ShotSample sample = sample_shots(labels, 4, 123);
  CHECK(std::is_sorted(sample.indices.begin(), sample.indices.end()));
  std::map<std::int64_t, int> per_class;
  for (const std::size_t idx : sample.indices) {
    per_class[labels[idx]]++;
    CHECK(idx < labels.size());
  }
  for (const auto& [cls, count] : per_class) CHECK(count == 4);
  CHECK(sample.indices.size() == 20);

  // repeatable and seed-sensitive
  CHECK(sample_shots(labels, 4, 123).indices == sample.indices);
  CHECK(sample_shots(labels, 4, 124).indices != sample.indices);

  // a class smaller than n contributes everything it has
  LabelVector tiny = {0, 0, 0, 1};
  const ShotSample all = sample_shots(tiny, 2, 7);
  int ones = 0;
  for (const std::size_t idx : all.indices) ones += tiny[idx] == 1;
  CHECK(ones == 1);
  CHECK(all.indices.size() == 3);

  CHECK_THROWS_AS(sample_shots({}, 2, 1), Error);
  CHECK_THROWS_AS(sample_shots(labels, 0, 1), Error);
}

TEST_CASE("holdout_split is stratified and partitions the input") {
  Rng rng(82);
  LabelVector labels;
  for (int i = 0; i < 120; ++i) labels.push_back(static_cast<std::int64_t>(rng.index(4)));
  std::vector<std::size_t> indices(labels.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;

  const auto [fit, hold] = holdout_split(indices, labels, 0.25, 99);
  CHECK(std::is_sorted(fit.begin(), fit.end()));
  CHECK(std::is_sorted(hold.begin(), hold.end()));
  std::set<std::size_t> all(fit.begin(), fit.end());
  for (const std::size_t idx : hold) CHECK(all.insert(idx).second);  // disjoint
  CHECK(all.size() == labels.size());

  // per class: ceil(fraction * count) land in the holdout
  std::map<std::int64_t, std::size_t> total, held;
  for (const std::size_t idx : indices) total[labels[idx]]++;
  for (const std::size_t idx : hold) held[labels[idx]]++;
  for (const auto& [cls, count] : total)
    CHECK(held[cls] == static_cast<std::size_t>(std::ceil(0.25 * count)));

  // singletons stay on the fit side
  LabelVector single = {0, 1, 1};
  const auto [fit2, hold2] = holdout_split({0, 1, 2}, single, 0.5, 5);
  CHECK(std::find(fit2.begin(), fit2.end(), 0u) != fit2.end());

  CHECK_THROWS_AS(holdout_split(indices, labels, 0.0, 1), Error);
  CHECK_THROWS_AS(holdout_split(indices, labels, 1.0, 1), Error);
}

TEST_CASE("gather helpers") {
  Matrix2D m(3, 2);
  m.values = {1, 2, 3, 4, 5, 6};
  const Matrix2D picked = gather_rows(m, {2, 0});
  CHECK(picked.values == std::vector<double>{5, 6, 1, 2});
  CHECK(gather_labels({7, 8, 9}, {1}) == LabelVector{8});
}

TEST_CASE("l2_normalize_rows yields unit rows and keeps zero rows") {
  Matrix2D m(2, 3);
  m.values = {3, 0, 4, 0, 0, 0};
  const Matrix2D normed = l2_normalize_rows(m);
  CHECK(normed.values[0] == doctest::Approx(0.6));
  CHECK(normed.values[2] == doctest::Approx(0.8));
  CHECK(normed.values[3] == 0.0);
  CHECK(normed.values[5] == 0.0);
}

TEST_CASE("probe gradient matches central finite differences") {
  Rng rng(83);
  double worst = 0.0;
  const double h = 1e-5;
  for (int iter = 0; iter < 10; ++iter) {
    const std::size_t n = 8, classes = 3, dim = 4;
    Matrix2D features;
    LabelVector labels;
    blob_problem(rng, n, classes, dim, &features, &labels);
    const Matrix2D normed = l2_normalize_rows(features);
    Matrix2D w(classes, dim);
    for (double& v : w.values) v = rng.normal();
    std::vector<double> b(classes);
    for (double& v : b) v = rng.normal();

    Matrix2D grad_w;
    std::vector<double> grad_b;
    probe_loss_grad(normed, labels, w, b, &grad_w, &grad_b);

    for (std::size_t i = 0; i < w.values.size(); ++i) {
      const double keep = w.values[i];
      w.values[i] = keep + h;
      const double up = probe_loss_grad(normed, labels, w, b, nullptr, nullptr);
      w.values[i] = keep - h;
      const double down = probe_loss_grad(normed, labels, w, b, nullptr, nullptr);
      w.values[i] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(grad_w.values[i] - fd) / std::max(1e-8, std::abs(fd)));
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double keep = b[i];
      b[i] = keep + h;
      const double up = probe_loss_grad(normed, labels, w, b, nullptr, nullptr);
      b[i] = keep - h;
      const double down = probe_loss_grad(normed, labels, w, b, nullptr, nullptr);
      b[i] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(grad_b[i] - fd) / std::max(1e-8, std::abs(fd)));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("probe separates easy blobs") {
  Rng rng(84);
  Matrix2D features;
  LabelVector labels;
  blob_problem(rng, 300, 4, 6, &features, &labels);
  ProbeConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 0.5;
  cfg.seed = 2;
  std::vector<double> trace;
  const LinearProbe probe = probe_fit(features, labels, nullptr, cfg, &trace);
  CHECK(probe.w.rows == 4);
  CHECK(probe.w.cols == 6);
  CHECK(accuracy(probe_logits(probe, features), labels) > 0.95);
  CHECK(trace.back() < trace.front());
}

TEST_CASE("few shots beat chance and more shots beat fewer") {
  Rng rng(85);
  Matrix2D features;
  LabelVector labels;
  blob_problem(rng, 600, 4, 6, &features, &labels);
  Matrix2D test_features;
  LabelVector test_labels;
  blob_problem(rng, 400, 4, 6, &test_features, &test_labels);

  auto fit_with_shots = [&](std::size_t shots) {
    const ShotSample sample = sample_shots(labels, shots, 42);
    ProbeConfig cfg;
    cfg.epochs = 150;
    cfg.learning_rate = 0.5;
    cfg.seed = 1;
    const LinearProbe probe = probe_fit(gather_rows(features, sample.indices),
                                        gather_labels(labels, sample.indices), nullptr, cfg);
    return accuracy(probe_logits(probe, test_features), test_labels);
  };
  const double one = fit_with_shots(1);
  const double sixteen = fit_with_shots(16);
  CHECK(one > 0.3);  // chance is 0.25
  CHECK(sixteen >= one);
}

TEST_CASE("init matrix seeds the weights (language-prior slot)") {
  Rng rng(86);
  Matrix2D features;
  LabelVector labels;
  blob_problem(rng, 60, 3, 4, &features, &labels);
  Matrix2D init(3, 4);
  for (double& v : init.values) v = rng.normal();

  ProbeConfig cfg;
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;  // keep the init untouched
  cfg.seed = 0;
  const LinearProbe probe = probe_fit(features, labels, &init, cfg);
  CHECK(probe.w.values == init.values);

  Matrix2D wrong(2, 4);
  CHECK_THROWS_AS(probe_fit(features, labels, &wrong, cfg), Error);
}

TEST_CASE("probe save/load round trip") {
  TmpDir dir("probe");
  Rng rng(87);
  Matrix2D features;
  LabelVector labels;
  blob_problem(rng, 80, 3, 4, &features, &labels);
  ProbeConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 0.3;
  cfg.seed = 6;
  LinearProbe probe = probe_fit(features, labels, nullptr, cfg);
  probe.backbone = "vit";
  probe_save(probe, dir / "p.json");
  const LinearProbe back = probe_load(dir / "p.json");
  CHECK(back.backbone == "vit");
  CHECK(back.w.rows == probe.w.rows);
  // weights survive as float32; logits of the reloaded probe are stable
  probe_save(back, dir / "p2.json");
  CHECK(testutil::same_bytes(dir / "p.json", dir / "p2.json"));
  const LinearProbe again = probe_load(dir / "p2.json");
  CHECK(probe_logits(back, features).values == probe_logits(again, features).values);
}

}  // TEST_SUITE
