#pragma once

#include <cstdint>

namespace masc::macs {

namespace detail {
inline thread_local std::uint64_t* t_active = nullptr;
}

/// Adds to the counter installed on this thread, if any. Called from inside
/// the multiply-accumulate kernels (matmul, sparse aggregation, Gram matrix).
inline void add(std::uint64_t n) noexcept {
  if (detail::t_active) *detail::t_active += n;
}

/// Counts multiply-accumulates executed on this thread while alive.
class ScopedCounter {
 public:
  ScopedCounter() : previous_(detail::t_active) { detail::t_active = &count_; }
  ~ScopedCounter() { detail::t_active = previous_; }
  ScopedCounter(const ScopedCounter&) = delete;
  ScopedCounter& operator=(const ScopedCounter&) = delete;

  std::uint64_t count() const noexcept { return count_; }

 private:
  std::uint64_t count_ = 0;
  std::uint64_t* previous_;
};

}  // namespace masc::macs
