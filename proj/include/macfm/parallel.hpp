#pragma once

#include <cstddef>
#include <functional>

namespace macfm {

/// Worker cap: MACFM_THREADS if set to a positive integer, else hardware concurrency.
std::size_t worker_count();

/// Runs task(i) for i in [0, n) on up to `workers` threads. The first exception
/// thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& task, std::size_t workers = worker_count());

/// Keeps large temporaries on the heap instead of fresh mmap calls per
/// allocation (glibc only). Call once at program start.
void tune_allocator();

}  // namespace macfm
