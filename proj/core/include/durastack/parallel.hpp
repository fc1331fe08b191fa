#pragma once

#include <cstddef>
#include <memory>

#include <tbb/global_control.h>
#include <tbb/parallel_for.h>

namespace durastack {

/// Runs body(i) for i in [0, n). Bodies must only write to per-index state so
/// results never depend on scheduling.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  if (n == 0) return;
  if (n == 1) {
    body(std::size_t{0});
    return;
  }
  tbb::parallel_for(std::size_t{0}, n, [&](std::size_t i) { body(i); });
}

/// Caps worker threads for the lifetime of the object (0 = library default).
class ThreadLimit {
 public:
  explicit ThreadLimit(std::size_t threads) {
    if (threads > 0) {
      control_ = std::make_unique<tbb::global_control>(
          tbb::global_control::max_allowed_parallelism, threads);
    }
  }

 private:
  std::unique_ptr<tbb::global_control> control_;
};

}  // namespace durastack
