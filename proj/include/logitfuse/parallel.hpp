#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace logitfuse {

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_max_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

// Runs f(i) for i in [0, n). Iterations must write disjoint state, which makes
// the result independent of the schedule and of the thread count.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
  const std::int64_t count = static_cast<std::int64_t>(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t i = 0; i < count; ++i) f(static_cast<std::size_t>(i));
}

// Deterministic reduction: the range is cut into fixed-size blocks, block
// partials may be computed in parallel, and partials are combined serially in
// block order. Floating-point results are therefore bit-identical no matter
// how many threads run.
template <typename Acc, typename BlockFn, typename CombineFn>
Acc blocked_reduce(std::size_t n, std::size_t block, Acc init, BlockFn block_fn,
                   CombineFn combine) {
  if (n == 0) return init;
  if (block == 0) block = 1;
  const std::size_t num_blocks = (n + block - 1) / block;
  std::vector<Acc> partials(num_blocks, init);
  parallel_for(num_blocks, [&](std::size_t k) {
    const std::size_t lo = k * block;
    const std::size_t hi = lo + block < n ? lo + block : n;
    partials[k] = block_fn(lo, hi);
  });
  Acc acc = std::move(init);
  for (std::size_t k = 0; k < num_blocks; ++k) acc = combine(std::move(acc), partials[k]);
  return acc;
}

inline constexpr std::size_t kReduceBlock = 1024;

}  // namespace logitfuse
