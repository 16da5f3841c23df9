#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace hydisc {

// FNV-1a over arbitrary bytes. Used for seed derivation and content hashes.
std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a(std::string_view s);

// Derives an independent stream seed from a master seed and a tag path.
// The same (seed, tags...) always yields the same value, so random draws can
// be keyed by (round, client, sample) instead of by execution order.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t a);
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t a, std::uint64_t b);
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c);

// Deterministic PRNG (splitmix64 core) with a platform-independent gaussian.
// The standard <random> distributions are implementation-defined, which would
// break bit-identical reruns across toolchains.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  double next_double();    // uniform [0, 1)
  double next_uniform(double lo, double hi);
  double next_gaussian();  // standard normal, Box-Muller
  double next_gamma(double alpha);  // Marsaglia-Tsang, alpha > 0
  // Uniform index in [0, n). n must be positive.
  std::size_t next_index(std::size_t n);
  // k distinct indices from [0, n), ascending.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hydisc
