#pragma once

#include <functional>

namespace collabvn {

/// Calls fn(i) for i in [0, n) on up to `threads` workers (0 = hardware
/// concurrency). Work items must write to disjoint outputs. The exception of
/// the lowest failing index is rethrown after all workers have joined.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

int resolve_threads(int requested);

}  // namespace collabvn
