#pragma once

#include <cstdint>
#include <functional>
#include <string_view>

namespace focalforge {

// Process-wide cap on worker threads. Defaults to hardware concurrency.
void set_thread_count(int n);
int thread_count();

// Reads FOCALFORGE_THREADS; returns 0 when unset or unparsable.
int thread_count_from_env();

// Splits [begin, end) into contiguous chunks, one per worker. Each index is
// handled by exactly one invocation so results never depend on the split.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& body,
                  int threads = 0);

// Mixes a seed with a string key (FNV-1a) so per-item RNG streams are
// independent of processing order.
std::uint64_t keyed_seed(std::uint64_t seed, std::string_view key);

}  // namespace focalforge
