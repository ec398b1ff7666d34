#include "vlm3d/threading.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace vlm3d {

int worker_count() {
  static const int count = [] {
    if (const char* env = std::getenv("VLM3D_THREADS")) {
      const int n = std::atoi(env);
      if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
  }();
  return count;
}

void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = std::min<std::int64_t>(worker_count(), n);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  // Dynamic chunking over a fixed chunk grid; chunk boundaries do not depend
  // on the worker count, only the assignment of chunks to threads does.
  const std::int64_t chunk = std::max<std::int64_t>(1, n / (workers * 4));
  std::atomic<std::int64_t> next{0};
  auto work = [&] {
    while (true) {
      const std::int64_t begin = next.fetch_add(chunk);
      if (begin >= n) break;
      fn(begin, std::min(begin + chunk, n));
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  for (int i = 1; i < workers; ++i) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
}

}  // namespace vlm3d
