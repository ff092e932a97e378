#include "fox/scratch.hpp"

#include <algorithm>

namespace fox::scratch {
namespace {
thread_local Stats g_stats;
}  // namespace

Stats stats() { return g_stats; }

void reset() { g_stats = Stats{}; }

Lease::Lease(std::size_t bytes) : bytes_(bytes) {
  g_stats.current += bytes_;
  g_stats.peak = std::max(g_stats.peak, g_stats.current);
}

Lease::~Lease() { g_stats.current -= bytes_; }

}  // namespace fox::scratch
