// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace blora {

// Deterministic counter-free random stream (xoshiro256++ core).
//
// Streams are value types: copying a stream freezes its state, which is how
// common-random-number reruns are implemented. Every consumer derives its own
// stream from the root seed and a stable name ("module/purpose"), so adding a
// new consumer never perturbs the draws seen by existing ones.
class RandomStream {
 public:
  RandomStream() : RandomStream(0x9e3779b97f4a7c15ull) {}
  explicit RandomStream(std::uint64_t seed);

  // Named-stream derivation: mixes the root seed with a hash of the id.
  static RandomStream derive(std::uint64_t root_seed, std::string_view stream_id);

  std::uint64_t next_u64();

  // Uniform on [0, 1).
  double uniform();

  // Standard normal via Box-Muller; draws are consumed in pairs with the
  // second cached, so the sequence depends only on the call count.
  double normal();

  // Uniform integer on [0, n).
  std::uint64_t uniform_int(std::uint64_t n);

  // Fisher-Yates shuffle of an index vector.
  void shuffle(std::vector<int>& idx);

 private:
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// FNV-1a 64-bit hash of a string, used for stream-id mixing.
std::uint64_t fnv1a64(std::string_view s);

// SplitMix64 step, used to expand seeds into full generator state.
std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace blora
