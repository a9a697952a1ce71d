#pragma once

#include <cstddef>
#include <functional>

namespace rangeaug {

// Worker cap used by data-parallel kernels. Defaults to RANGEAUG_THREADS when
// set, otherwise hardware concurrency.
std::size_t num_threads();
void set_num_threads(std::size_t n);

// Reads RANGEAUG_THREADS again; a value of 0 or garbage falls back to hardware
// concurrency.
void reset_num_threads_from_env();

// Splits [0, n) into contiguous chunks and runs body(begin, end) on each.
// Chunks never share output, so results do not depend on the thread count as
// long as body writes only indices inside its own range.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk = 1);

}  // namespace rangeaug
