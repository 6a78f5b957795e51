#pragma once

#include <cstddef>
#include <functional>

namespace fbsde {

/// Worker count used when a call passes `threads <= 0`. Defaults to 1.
int default_threads();
void set_default_threads(int threads);

/// Runs `body(begin, end)` over disjoint index blocks covering [0, n).
///
/// Callers write results into per-index slots only; block boundaries and the
/// worker count therefore never influence the numbers produced.
void parallel_blocks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                     int threads = 0);

template <typename F>
void parallel_for(std::size_t n, F&& fn, int threads = 0) {
  parallel_blocks(
      n,
      [&fn](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      },
      threads);
}

}  // namespace fbsde
