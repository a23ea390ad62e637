#pragma once

#include <cstddef>
#include <span>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ppx {

inline void set_thread_count(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n < 1 ? 1 : n);
#else
  (void)n;
#endif
}

inline int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

/// Runs body(y) for y in [begin, end). Rows must not write to shared state
/// other than their own outputs.
template <typename F>
void parallel_rows(int begin, int end, F&& body) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (int y = begin; y < end; ++y) body(y);
#else
  for (int y = begin; y < end; ++y) body(y);
#endif
}

/// Pairwise summation over fixed-size blocks. The reduction tree depends only
/// on the input length, so the result is identical for every thread count.
inline double deterministic_sum(std::span<const double> values) {
  constexpr std::size_t kBlock = 256;
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  const std::size_t nblocks = (n + kBlock - 1) / kBlock;
  std::vector<double> partial(nblocks);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (nblocks > 8)
#endif
  for (long b = 0; b < static_cast<long>(nblocks); ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kBlock;
    const std::size_t hi = lo + kBlock < n ? lo + kBlock : n;
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += values[i];
    partial[static_cast<std::size_t>(b)] = s;
  }
  std::size_t len = nblocks;
  while (len > 1) {
    const std::size_t half = (len + 1) / 2;
    for (std::size_t i = 0; i < len / 2; ++i) partial[i] = partial[2 * i] + partial[2 * i + 1];
    if (len % 2 == 1) partial[len / 2] = partial[len - 1];
    len = half;
  }
  return partial[0];
}

/// Deterministic dot product with the same reduction shape as
/// deterministic_sum.
inline double deterministic_dot(std::span<const double> a, std::span<const double> b) {
  constexpr std::size_t kBlock = 256;
  const std::size_t n = a.size();
  if (n == 0) return 0.0;
  const std::size_t nblocks = (n + kBlock - 1) / kBlock;
  std::vector<double> partial(nblocks);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (nblocks > 8)
#endif
  for (long blk = 0; blk < static_cast<long>(nblocks); ++blk) {
    const std::size_t lo = static_cast<std::size_t>(blk) * kBlock;
    const std::size_t hi = lo + kBlock < n ? lo + kBlock : n;
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += a[i] * b[i];
    partial[static_cast<std::size_t>(blk)] = s;
  }
  std::size_t len = nblocks;
  while (len > 1) {
    const std::size_t half = (len + 1) / 2;
    for (std::size_t i = 0; i < len / 2; ++i) partial[i] = partial[2 * i] + partial[2 * i + 1];
    if (len % 2 == 1) partial[len / 2] = partial[len - 1];
    len = half;
  }
  return partial[0];
}

}  // namespace ppx
