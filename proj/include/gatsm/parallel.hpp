#ifndef GATSM_PARALLEL_HPP
#define GATSM_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace gatsm {

/// Worker count: 1 unless the GATSM_THREADS environment variable overrides it.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous blocks across
/// workers; results that are written to per-index slots can then be reduced in
/// index order, which keeps every reduction deterministic for any worker
/// count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace gatsm

#endif
