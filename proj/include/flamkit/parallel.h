// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_PARALLEL_H_
#define FLAMKIT_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace flamkit {

// Worker count: FLAMKIT_THREADS if set and positive, else hardware concurrency.
unsigned default_threads();

// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = default_threads()).
// Work items are claimed dynamically; the first exception is rethrown after
// all workers stop.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace flamkit

#endif  // FLAMKIT_PARALLEL_H_
