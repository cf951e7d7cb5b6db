#pragma once

#include <cstdint>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

#include "msp/error.hpp"

namespace msp {

// Static-chunked parallel loop: index i is processed by thread i % n_threads.
// Results are deterministic as long as the body writes only to slot i, which
// is how every caller in this codebase uses it (per-point descriptors,
// per-scene generation). Exceptions from workers are rethrown on the caller.
inline void parallel_for(int64_t n, int n_threads, const std::function<void(int64_t)>& body) {
  require(n >= 0, ErrorKind::contract, "parallel_for needs n >= 0");
  if (n == 0) return;
  if (n_threads <= 1 || n == 1) {
    for (int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  const int workers = static_cast<int>(std::min<int64_t>(n_threads, n));
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int64_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace msp
