#include "nfa/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace nfa::parallel {

namespace {

int from_env() {
  const char* raw = std::getenv("NF_THREADS");
  if (raw == nullptr || *raw == '\0') return 0;
  try {
    const int n = std::stoi(raw);
    return n < 0 ? 0 : n;
  } catch (const std::exception&) {
    return 0;
  }
}

std::atomic<int>& configured() {
  static std::atomic<int> value{from_env()};
  return value;
}

constexpr std::size_t kMinParallelWork = 1u << 15;

}  // namespace

int thread_count() {
  const int n = configured().load(std::memory_order_relaxed);
  return n <= 0 ? 1 : n;
}

void set_thread_count(int n) { configured().store(n < 0 ? 0 : n, std::memory_order_relaxed); }

bool worth_parallel(std::size_t work) { return thread_count() > 1 && work >= kMinParallelWork; }

}  // namespace nfa::parallel
