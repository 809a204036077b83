#pragma once

#include <cstddef>
#include <functional>

namespace ansync {

// Global worker budget. Defaults to the env var CC_THREADS if set, otherwise
// to std::thread::hardware_concurrency().
int thread_budget();
void set_thread_budget(int n);

// Runs fn(i) for i in [0, n) on up to thread_budget() workers, static block
// partition. Each index must touch only its own output slot; results are
// then independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ansync
