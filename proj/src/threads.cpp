#include "salicon/threads.hpp"

#include <cblas.h>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <thread>

namespace salicon {

std::size_t worker_count() {
  if (const char* env = std::getenv("SALICON_THREADS")) {
    std::size_t value = 0;
    const char* end = env + std::strlen(env);
    auto [ptr, ec] = std::from_chars(env, end, value);
    if (ec == std::errc() && ptr == end && value > 0) return value;
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void set_blas_threads(std::size_t threads) {
  openblas_set_num_threads(static_cast<int>(std::max<std::size_t>(1, threads)));
}

}  // namespace salicon
