#pragma once
// Shared plumbing: error taxonomy, deterministic seed derivation, content
// hashing, and the few tiny text/number helpers everything else leans on.

#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace redetect {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto exit codes: bad input/config -> 1,
// runtime failure -> 2 (failed acceptance assertions use 3 separately).
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller handed us something malformed (exit 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class EmptyInputError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// The computation itself cannot proceed (exit 2).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};
class IoError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};
class DegenerateInputError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};
class RewriteFailure : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};
class EndpointError : public RewriteFailure {
 public:
  using RewriteFailure::RewriteFailure;
};
class TrainingAborted : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

// A numerical check the run was asked to enforce did not hold (exit 3).
class CheckFailure : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic seeding. All randomness in the library flows through
// std::mt19937_64 engines whose seeds are derived with these mixers, so a run
// is reproducible bit-for-bit from one top-level seed.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derive an independent stream seed from (seed, salt).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t state = seed ^ 0x6a09e667f3bcc909ULL;
  splitmix64(state);
  state ^= salt;
  return splitmix64(state);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return mix_seed(mix_seed(seed, a), b);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

// FNV-1a, used for vocab hashes and artifact fingerprints.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v, int width = 16) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf + (16 - width), buf + 16);
}

// Stable shortest-roundtrip-ish text form for doubles in TSV output.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Bounded, deterministic parallel map: items are processed in contiguous
// index ranges and callers write results into pre-sized slots, so the output
// is independent of the number of workers.
// ---------------------------------------------------------------------------

inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  if (jobs <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t lo = w * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline std::string lowercase_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

}  // namespace redetect
