#pragma once

#include <functional>

namespace tsynd {

// Worker cap: TSYND_THREADS env var (0 = sequential), otherwise the hardware
// concurrency. Read once per process.
int worker_count();

// Runs fn(0..n-1) across workers. Each index writes only its own outputs, so
// callers reduce results in index order and match the sequential run exactly.
// The first exception thrown by any worker is rethrown here.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace tsynd
