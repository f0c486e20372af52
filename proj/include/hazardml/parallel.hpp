#pragma once

#include <cstddef>
#include <functional>

namespace hazardml {

// Worker count from HAZARDML_THREADS, else hardware concurrency (at least 1).
int default_parallelism();

// Runs body(i) for i in [0, n) on up to `threads` workers. Iterations must be
// independent; results are written by index so the outcome does not depend on
// scheduling. The first exception thrown by any iteration is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

}  // namespace hazardml
