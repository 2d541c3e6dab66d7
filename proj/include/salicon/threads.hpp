#ifndef SALICON_THREADS_HPP_
#define SALICON_THREADS_HPP_

#include <cstddef>

namespace salicon {

// Worker count for parallel sections: SALICON_THREADS when set to a
// positive integer, otherwise the hardware concurrency (at least 1).
std::size_t worker_count();

// Caps the BLAS backend's internal threading.
void set_blas_threads(std::size_t threads);

}  // namespace salicon

#endif  // SALICON_THREADS_HPP_
