#ifndef NFA_PARALLEL_HPP
#define NFA_PARALLEL_HPP

#include <cstddef>

namespace nfa::parallel {

// Worker count taken from NF_THREADS. 0 (the default when unset) selects the
// single-threaded deterministic mode; every kernel here is written so that its
// result does not depend on the thread count anyway.
int thread_count();

// Overrides NF_THREADS for the rest of the process (tests, benchmarks).
void set_thread_count(int n);

// True when a loop with `work` scalar operations should fan out.
bool worth_parallel(std::size_t work);

}  // namespace nfa::parallel

#endif  // NFA_PARALLEL_HPP
