#include "hydisc/rng.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace hydisc {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view s) { return fnv1a(s.data(), s.size()); }

namespace {

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  return mix(master ^ fnv1a(tag));
}
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t a) {
  return mix(derive_seed(master, tag) ^ mix(a));
}
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t a, std::uint64_t b) {
  return mix(derive_seed(master, tag, a) ^ mix(b + 0x517cc1b727220a95ull));
}
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
  return mix(derive_seed(master, tag, a, b) ^ mix(c + 0x2545f4914f6cdd1dull));
}

std::uint64_t RandomStream::next_u64() {
  state_ += 0x9e3779b97f4a7c15ull;
  std::uint64_t x = state_;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double RandomStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::next_uniform(double lo, double hi) {
  return lo + (hi - lo) * next_double();
}

double RandomStream::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = next_double();
  } while (u1 <= 0.0);
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double RandomStream::next_gamma(double alpha) {
  if (alpha <= 0.0) throw std::invalid_argument("next_gamma: alpha must be positive");
  if (alpha < 1.0) {
    // Boost to alpha + 1 and scale back (Marsaglia-Tsang, section 6).
    const double u = next_double();
    return next_gamma(alpha + 1.0) * std::pow(u <= 0.0 ? 1e-300 : u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = next_gaussian();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = next_double();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::size_t RandomStream::next_index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("next_index: n must be positive");
  return static_cast<std::size_t>(next_u64() % n);
}

std::vector<std::size_t> RandomStream::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k exceeds n");
  // Floyd's algorithm, then sort for a canonical result.
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t j = n - k; j < n; ++j) {
    std::size_t t = next_index(j + 1);
    bool seen = false;
    for (std::size_t v : out) {
      if (v == t) {
        seen = true;
        break;
      }
    }
    out.push_back(seen ? j : t);
  }
  for (std::size_t i = 1; i < out.size(); ++i) {
    std::size_t v = out[i], j = i;
    for (; j > 0 && out[j - 1] > v; --j) out[j] = out[j - 1];
    out[j] = v;
  }
  return out;
}

}  // namespace hydisc
