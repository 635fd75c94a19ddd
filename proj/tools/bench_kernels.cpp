// Times the OpenMP kernels against the serial reference implementations on a
// synthetic instance. Build target: bench_kernels; not part of the test suite.

#include <chrono>
#include <cstdio>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ncflow/dataset.hpp"
#include "ncflow/init.hpp"
#include "ncflow/model.hpp"
#include "support/reference.hpp"

using namespace ncflow;
using Clock = std::chrono::steady_clock;

namespace {

template <typename F>
double time_ms(F&& fn, int reps) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) fn();
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-28s serial %10.3f ms   parallel %10.3f ms   speedup %5.2fx\n", name,
              serial_ms, parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP\n");
#endif

  GenerateConfig gc;
  gc.num_classes = 4;
  gc.dim = 64;
  gc.points_per_class = 1024;
  gc.cone_half_angle = 0.1;
  gc.norm_lo = 0.9;
  gc.norm_hi = 1.1;
  gc.seed = 1;
  const Dataset data = generate_separable(gc);

  const InitShape shape = random_balanced(gc.dim, gc.num_classes, 32, 1e-2, 7);
  const NetParams params = materialize(shape, LossKind::CrossEntropy);

  report("loss",
         time_ms([&] { (void)reference::loss(params, data); }, 5),
         time_ms([&] { (void)loss(params, data); }, 5));
  report("gradients",
         time_ms([&] { (void)reference::gradients(params, data); }, 5),
         time_ms([&] { (void)gradients(params, data); }, 5));
  report("separability certificate",
         time_ms([&] { (void)reference::validate_separability(data); }, 3),
         time_ms([&] { (void)validate_separability(data); }, 3));
  return 0;
}
