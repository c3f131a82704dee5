#pragma once

#include <cstddef>
#include <functional>

namespace sigmap {

/// Worker count used by map builders, the tracer and training.
/// Defaults to $SIGMAP_THREADS when set, else 1.
int thread_count();
void set_thread_count(int n);

/// Runs fn(begin, end) over `chunks` contiguous pieces of [0, n). The
/// partition depends only on n and `chunks`, never on the worker count, so
/// callers that reduce per-chunk results in chunk order are deterministic.
/// Nested calls run serially on the calling thread.
void parallel_chunks(std::size_t n, std::size_t chunks,
                     const std::function<void(std::size_t chunk, std::size_t begin, std::size_t end)>& fn);

/// Convenience: one task per index.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace sigmap
