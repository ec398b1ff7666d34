#pragma once

#include <cstdint>
#include <functional>

namespace vlm3d {

// Number of worker threads, read once from VLM3D_THREADS (default: machine
// parallelism). All results are bit-identical regardless of this value:
// parallel loops only ever write disjoint output slots, and every gradient
// accumulation happens in a fixed order.
int worker_count();

// Runs fn(begin, end) over a partition of [0, n). Each range is processed by
// exactly one worker; fn must only write slots it owns.
void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace vlm3d
