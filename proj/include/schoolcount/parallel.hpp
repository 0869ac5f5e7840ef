#pragma once

namespace schoolcount {

// Applies SCHOOLCOUNT_THREADS (0 or unset = OpenMP default) to the OpenMP
// runtime. Returns the thread count now in effect.
int configure_threads_from_env();

void set_thread_count(int threads);
int thread_count();

}  // namespace schoolcount
