#pragma once

#include <cstdint>
#include <exception>
#include <mutex>

namespace mbsgd::detail {

/// Runs body(i) for i in [0, count) on the OpenMP team with dynamic scheduling. Exceptions
/// cannot cross the parallel region, so the one from the lowest index is rethrown afterwards.
template <class Body>
void parallel_for(std::int64_t count, Body&& body) {
  std::exception_ptr failure;
  std::int64_t failed_at = count;
  std::mutex guard;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      body(i);
    } catch (...) {
      const std::lock_guard<std::mutex> lock(guard);
      if (i < failed_at) {
        failed_at = i;
        failure = std::current_exception();
      }
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace mbsgd::detail
