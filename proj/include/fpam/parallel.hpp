#pragma once

#include <cstddef>
#include <functional>

namespace fpam {

// Number of worker threads used by parallel_for. 0 means run on the calling
// thread only. Initialized from the FPAM_THREADS environment variable.
int num_threads();
void set_num_threads(int threads);

// Calls fn(i) for every i in [0, count). Each index must write only to its own
// pre-assigned output slot, so the result does not depend on the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

// Treats subnormal floats as zero on the calling thread (x86 SSE; no-op
// elsewhere). Threads started afterwards inherit the setting.
void flush_denormals_to_zero();

}  // namespace fpam
