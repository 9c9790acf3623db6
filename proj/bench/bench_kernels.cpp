// Times the OpenMP kernels against the serial reference on a synthetic stack
// and checks they agree. Build target only; not part of the test suite.
//
//   bench_kernels [rows] [classes] [backbones] [feature_dim]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "logitfuse/calibration.hpp"
#include "logitfuse/ensembles.hpp"
#include "logitfuse/learned.hpp"
#include "logitfuse/metrics.hpp"
#include "logitfuse/nlc.hpp"
#include "logitfuse/parallel.hpp"
#include "logitfuse/rng.hpp"
#include "logitfuse/serial_ref.hpp"

using namespace logitfuse;
using clock_type = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto start = clock_type::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto stop = clock_type::now();
  return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t rows = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 20000;
  const std::size_t classes = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 100;
  const std::size_t backbones = argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 4;
  const std::size_t fdim = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 64;
  const int reps = 5;

  Rng rng(42);
  LogitStack stack;
  for (std::size_t b = 0; b < backbones; ++b) {
    stack.names.push_back("bb" + std::to_string(b));
    Matrix2D m(rows, classes);
    for (double& v : m.values) v = rng.normal();
    stack.logits.push_back(std::move(m));
  }
  for (std::size_t r = 0; r < rows; ++r)
    stack.labels.push_back(static_cast<std::int64_t>(rng.index(classes)));

  Matrix2D features(rows, backbones * fdim);
  for (double& v : features.values) v = rng.normal();
  NlcModel model = nlc_init(backbones * fdim, 128, backbones, 7);
  for (double& v : model.w2) v = 0.01 * rng.normal();  // nonzero second layer
  model.feature_dims.assign(backbones, fdim);

  std::vector<double> temps(backbones, 0.7);

  std::printf("rows=%zu classes=%zu backbones=%zu fdim=%zu threads=%d\n", rows, classes,
              backbones, fdim, max_threads());
  std::printf("%-14s %12s %12s %8s  %s\n", "kernel", "serial(ms)", "parallel(ms)", "speedup",
              "agreement");

  auto report = [&](const char* name, double t_serial, double t_parallel, bool exact,
                    double max_abs_diff) {
    const std::string agreement =
        exact ? "bitwise" : "max|d|=" + std::to_string(max_abs_diff);
    std::printf("%-14s %12.3f %12.3f %7.2fx  %s\n", name, t_serial, t_parallel,
                t_serial / t_parallel, agreement.c_str());
  };

  {
    LabelVector a, b;
    const double ts = time_ms([&] { a = serial::top1(stack.logits[0]); }, reps);
    const double tp = time_ms([&] { b = top1(stack.logits[0]); }, reps);
    report("top1", ts, tp, a == b, 0.0);
  }
  {
    Matrix2D a, b;
    const double ts = time_ms([&] { a = serial::log_avg(stack); }, reps);
    const double tp = time_ms([&] { b = log_avg(stack); }, reps);
    report("log_avg", ts, tp, a.values == b.values, 0.0);
  }
  {
    Matrix2D a, b;
    const double ts = time_ms([&] { a = serial::combine_fixed(stack, temps); }, reps);
    const double tp = time_ms([&] { b = combine_fixed(stack, temps); }, reps);
    report("combine_fixed", ts, tp, a.values == b.values, 0.0);
  }
  {
    Matrix2D a, b;
    const double ts = time_ms([&] { a = serial::nlc_forward(model, features); }, reps);
    const double tp = time_ms([&] { b = nlc_forward(model, features); }, reps);
    report("nlc_forward", ts, tp, a.values == b.values, 0.0);
  }
  {
    double a = 0.0, b = 0.0;
    const double ts = time_ms([&] { a = serial::mean_nll(stack.logits[0], stack.labels, 1.5); },
                              reps);
    const double tp = time_ms([&] { b = mean_nll(stack.logits[0], stack.labels, 1.5); }, reps);
    // blocked reduction reorders sums; report the rounding gap instead
    report("mean_nll", ts, tp, a == b, std::fabs(a - b));
  }
  return 0;
}
