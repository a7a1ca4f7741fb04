#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace geomine {

/// Base exception for every recoverable failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the external semantic scorer cannot be reached.
class ScorerUnavailable : public Error {
 public:
  using Error::Error;
};

/// Non-fatal conditions (degenerate consensus, insufficient evidence) are
/// reported here. The default sink writes to stderr; tests swap it out.
using WarningSink = std::function<void(std::string_view)>;
void set_warning_sink(WarningSink sink);
void warn(std::string_view message);

// Seeds. Every random decision is derived from one root seed through named
// substreams so that stages never share generator state.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

// 64-bit FNV-1a, used for content addressing of stage artifacts.
class Fnv1a {
 public:
  Fnv1a& update(const void* data, std::size_t size);
  Fnv1a& update(std::string_view s) { return update(s.data(), s.size()); }
  template <typename T>
  Fnv1a& update_value(const T& v) {
    return update(&v, sizeof(T));
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

/// Runs fn(chunk_index, begin, end) over [0, n) split into fixed-size
/// chunks. Chunk boundaries depend only on n and chunk_size, so callers that
/// reduce per-chunk partials in chunk order get thread-count-independent
/// results.
void parallel_for_chunks(std::size_t n, std::size_t chunk_size,
                         const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

std::size_t chunk_count(std::size_t n, std::size_t chunk_size);

double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> a);
/// Cosine with explicit renormalization; exact to double rounding even when
/// the inputs are only unit-norm to float precision.
double cosine(std::span<const float> a, std::span<const float> b);

}  // namespace geomine
