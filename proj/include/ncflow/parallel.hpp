#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ncflow {

// Reduction kernels accumulate per-sample contributions into fixed-size
// block partials (each block summed in index order) and then combine the
// blocks serially in block order. The block decomposition does not depend on
// the thread count, so results are bit-identical for any OMP_NUM_THREADS.
inline constexpr int kReduceBlock = 64;

inline int num_blocks(int n) { return (n + kReduceBlock - 1) / kReduceBlock; }

inline int block_begin(int b) { return b * kReduceBlock; }

inline int block_end(int b, int n) {
  const int e = (b + 1) * kReduceBlock;
  return e < n ? e : n;
}

}  // namespace ncflow
