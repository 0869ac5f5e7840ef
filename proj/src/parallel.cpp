#include "schoolcount/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace schoolcount {

int configure_threads_from_env() {
  if (const char* env = std::getenv("SCHOOLCOUNT_THREADS")) {
    try {
      const int requested = std::stoi(env);
      if (requested > 0) omp_set_num_threads(requested);
    } catch (const std::exception&) {
      // unparsable value: keep the runtime default
    }
  }
  return omp_get_max_threads();
}

void set_thread_count(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int thread_count() { return omp_get_max_threads(); }

}  // namespace schoolcount
