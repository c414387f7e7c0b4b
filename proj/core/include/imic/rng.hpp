#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace imic {

using Rng = std::mt19937_64;

/// Derives a substream seed from a master seed and a stream name. Streams
/// with different names are decorrelated; adding a new stream never changes
/// the values drawn from existing ones.
std::uint64_t stream_seed(std::uint64_t master, std::string_view name);

inline Rng make_stream(std::uint64_t master, std::string_view name) {
  return Rng(stream_seed(master, name));
}

}  // namespace imic
