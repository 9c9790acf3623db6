#include <atomic>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "logitfuse/calibration.hpp"
#include "logitfuse/ensembles.hpp"
#include "logitfuse/learned.hpp"
#include "logitfuse/metrics.hpp"
#include "logitfuse/nlc.hpp"
#include "logitfuse/parallel.hpp"
#include "logitfuse/rng.hpp"
#include "logitfuse/serial_ref.hpp"

using namespace logitfuse;

namespace {

struct ThreadGuard {
  int saved;
  ThreadGuard() : saved(max_threads()) {}
  ~ThreadGuard() { set_max_threads(saved); }
};

}  // namespace

TEST_SUITE("parallel") {

TEST_CASE("parallel_for covers every index exactly once") {
  const std::size_t n = 1337;
  std::vector<std::atomic<int>> hits(n);
  for (auto& h : hits) h.store(0);
  parallel_for(n, [&](std::size_t i) { hits[i].fetch_add(1); });
  for (const auto& h : hits) CHECK(h.load() == 1);
  parallel_for(0, [&](std::size_t) { FAIL("body must not run for n = 0"); });
}

TEST_CASE("blocked_reduce computes exact integer sums") {
  const std::size_t n = 10'000;
  const auto total = blocked_reduce<std::int64_t>(
      n, 97, 0,
      [](std::size_t lo, std::size_t hi) {
        std::int64_t s = 0;
        for (std::size_t i = lo; i < hi; ++i) s += static_cast<std::int64_t>(i);
        return s;
      },
      [](std::int64_t a, std::int64_t b) { return a + b; });
  CHECK(total == static_cast<std::int64_t>(n) * (n - 1) / 2);

  const auto empty = blocked_reduce<std::int64_t>(
      0, 8, 42, [](std::size_t, std::size_t) { return std::int64_t{0}; },
      [](std::int64_t a, std::int64_t b) { return a + b; });
  CHECK(empty == 42);
}

TEST_CASE("blocked_reduce double sums are bit-stable across thread counts") {
  ThreadGuard guard;
  Rng rng(120);
  std::vector<double> values(5000);
  for (double& v : values) v = rng.normal() * std::pow(10.0, rng.uniform() * 6 - 3);

  auto run = [&] {
    return blocked_reduce<double>(
        values.size(), kReduceBlock, 0.0,
        [&](std::size_t lo, std::size_t hi) {
          double s = 0.0;
          for (std::size_t i = lo; i < hi; ++i) s += values[i];
          return s;
        },
        [](double a, double b) { return a + b; });
  };
  set_max_threads(1);
  const double serial_sum = run();
  set_max_threads(4);
  const double parallel_sum = run();
  CHECK(serial_sum == parallel_sum);  // bitwise, not approximate
}

TEST_CASE("serial reference kernels agree with the parallel versions") {
  ThreadGuard guard;
  set_max_threads(4);
  Rng rng(121);
  const std::size_t rows = 64, classes = 7, backbones = 3, fdim = 10;
  const LogitStack stack = testutil::random_stack(backbones, rows, classes, rng);
  const Matrix2D features = testutil::random_matrix(rows, backbones * fdim, rng);
  NlcModel model = nlc_init(backbones * fdim, 16, backbones, 9);
  Rng wiggle(122);  // break the W2 = 0 init so forward exercises real weights
  for (double& v : model.w2) v = 0.05 * wiggle.normal();
  model.feature_dims = {fdim, fdim, fdim};

  SUBCASE("top1") { CHECK(serial::top1(stack.logits[0]) == top1(stack.logits[0])); }

  SUBCASE("log_avg") {
    const Matrix2D a = serial::log_avg(stack);
    const Matrix2D b = log_avg(stack);
    CHECK(a.values == b.values);  // row-parallel: bitwise equal
  }

  SUBCASE("combine_fixed") {
    const std::vector<double> temps = {0.7, 1.4, 2.2};
    CHECK(serial::combine_fixed(stack, temps).values == combine_fixed(stack, temps).values);
  }

  SUBCASE("nlc_forward") {
    const Matrix2D a = serial::nlc_forward(model, features);
    const Matrix2D b = nlc_forward(model, features);
    CHECK(a.values == b.values);
  }

  SUBCASE("mean_nll") {
    const double a = serial::mean_nll(stack.logits[1], stack.labels, 1.3);
    const double b = mean_nll(stack.logits[1], stack.labels, 1.3);
    // reduction order differs (plain loop vs blocked); rounding-level agreement
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("row-wise ops are bit-identical across thread counts") {
  ThreadGuard guard;
  Rng rng(123);
  const LogitStack stack = testutil::random_stack(4, 80, 9, rng);
  const Matrix2D features = testutil::random_matrix(80, 12, rng);
  NlcModel model = nlc_init(12, 8, 4, 3);
  Rng wiggle(124);
  for (double& v : model.w2) v = 0.1 * wiggle.normal();

  set_max_threads(1);
  const Matrix2D avg1 = log_avg(stack);
  const Matrix2D fwd1 = nlc_forward(model, features);
  const double nll1 = mean_nll(stack.logits[0], stack.labels, 0.8);

  set_max_threads(4);
  const Matrix2D avg4 = log_avg(stack);
  const Matrix2D fwd4 = nlc_forward(model, features);
  const double nll4 = mean_nll(stack.logits[0], stack.labels, 0.8);

  CHECK(avg1.values == avg4.values);
  CHECK(fwd1.values == fwd4.values);
  CHECK(nll1 == nll4);  // blocked reduction: exact across thread counts
}

}  // TEST_SUITE
