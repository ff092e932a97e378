#ifndef FOX_SCRATCH_HPP_
#define FOX_SCRATCH_HPP_

#include <cstddef>

namespace fox::scratch {

// Per-thread accounting of transient working buffers. Kernels lease the
// bytes of every temporary they allocate for the duration of the call; the
// peak is what `bench` and the memory tests report. Outputs handed back to
// the caller are not transient and are not leased.
struct Stats {
  std::size_t current = 0;
  std::size_t peak = 0;
};

Stats stats();
void reset();

class Lease {
 public:
  explicit Lease(std::size_t bytes);
  ~Lease();
  Lease(const Lease&) = delete;
  Lease& operator=(const Lease&) = delete;

 private:
  std::size_t bytes_;
};

template <typename T>
std::size_t bytes_of(std::size_t elements) {
  return elements * sizeof(T);
}

}  // namespace fox::scratch

#endif  // FOX_SCRATCH_HPP_
