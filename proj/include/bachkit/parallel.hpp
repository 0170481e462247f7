#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace bachkit {

inline std::size_t default_workers() {
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Contiguous chunk [begin, end) of `n` items owned by `worker` out of `workers`.
struct Chunk {
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline Chunk chunk_of(std::size_t n, std::size_t workers, std::size_t worker) {
  const std::size_t base = n / workers, extra = n % workers;
  const std::size_t begin = worker * base + std::min(worker, extra);
  return {begin, begin + base + (worker < extra ? 1 : 0)};
}

/// Runs fn(worker, chunk) on `workers` threads over contiguous chunks of
/// [0, n); the calling thread takes chunk 0. The first exception (by worker
/// index) is rethrown after all threads join.
template <typename Fn>
void for_each_chunk(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, std::max<std::size_t>(n, 1)));
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](std::size_t w) {
    try {
      fn(w, chunk_of(n, workers, w));
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(run, w);
  run(0);
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace bachkit
