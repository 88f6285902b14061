#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedr {

using Vec = std::vector<double>;
using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

// Error hierarchy. Every failure surfaced by the library derives from Error so
// the CLI can map it onto an exit code in one place.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct EncodingError : Error {
  using Error::Error;
};
struct LengthError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};

inline double sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow.
inline double softplus(double x) {
  if (x > 0) {
    return x + std::log1p(std::exp(-x));
  }
  return std::log1p(std::exp(x));
}

// -log sigma(x)
inline double neg_log_sigmoid(double x) { return softplus(-x); }

inline bool all_finite(const Vec& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      return false;
    }
  }
  return true;
}

// 64-bit FNV-1a. Used wherever a stable, platform-independent hash is needed
// (feature buckets, dataset fingerprints).
inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace fedr
