#pragma once

#include <cstddef>
#include <functional>

namespace tapcam {

// Runs body(0..n-1) on up to `threads` workers (0 = hardware concurrency).
// Results must be written by index; if any call throws, the exception from
// the lowest index is rethrown after all workers finish.
void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t)>& body);

}  // namespace tapcam
