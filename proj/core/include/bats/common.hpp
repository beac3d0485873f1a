#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bats {

/// State and action vectors in environment units.
using Vec = std::vector<double>;

/// Malformed configuration, arguments, or input structures. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A required input artifact is absent or unreadable. CLI exit code 3.
struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical failure: divergence, non-finite values. CLI exit code 4.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

uint64_t splitmix64(uint64_t x);

/// Mix a master seed with stream ids so subsystems draw from independent,
/// reproducible RNG streams.
uint64_t derive_seed(uint64_t master, uint64_t stream);
uint64_t derive_seed(uint64_t master, uint64_t a, uint64_t b);

double l2_distance(const Vec& a, const Vec& b);
double l2_norm(const Vec& a);
bool all_finite(const Vec& v);

/// Byte-exact key for a vector of doubles; used for state identity.
std::string bit_key(const Vec& v);

/// Static-partition parallel map. fn(i) must be independent across i so the
/// result does not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace bats
