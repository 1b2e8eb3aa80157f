#pragma once

#include <cstddef>
#include <span>

namespace mbsgd {

/// Fixed-order pairwise summation. The result depends only on the values and their order,
/// which keeps parallel reductions bit-stable across thread counts.
double pairwise_sum(std::span<const double> values);

/// Number of OpenMP threads parallel kernels will use (1 when built without OpenMP).
int max_threads();

/// Set the OpenMP thread count for subsequent parallel kernels; n <= 0 leaves it unchanged.
void set_threads(int n);

}  // namespace mbsgd
