#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace svtr2 {

// ---------------------------------------------------------------------------
// Errors. Every checked failure in the library throws one of these so callers
// (and tests) can distinguish bad shapes from bad files from bad usage.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched tensor shapes / dimensions. Messages name both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration value (unknown variant, bad key, out-of-range field).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed text input (manifest lines, config files, checkpoints headers).
struct ParseError : Error {
  using Error::Error;
};

// Filesystem / binary format failures.
struct IoError : Error {
  using Error::Error;
};

// Semantically invalid data fed to an otherwise well-formed call
// (label out of charset, infeasible CTC instance, oversized enumeration).
struct InputError : Error {
  using Error::Error;
};

// API used in a state that does not support it (e.g. a branch that was
// stripped from the model, backward on a non-scalar).
struct StateError : Error {
  using Error::Error;
};

namespace detail {
inline void str_cat_into(std::ostringstream&) {}
template <class T, class... R>
void str_cat_into(std::ostringstream& os, const T& v, const R&... rest) {
  os << v;
  str_cat_into(os, rest...);
}
}  // namespace detail

// Tiny string builder used for error messages: str_cat("got ", n, " rows").
template <class... A>
std::string str_cat(const A&... parts) {
  std::ostringstream os;
  detail::str_cat_into(os, parts...);
  return os.str();
}

std::string shape_str(const std::vector<int>& shape);

// ---------------------------------------------------------------------------
// Deterministic RNG. All stochastic behaviour in the library (initialization,
// data synthesis, shuffling) flows through this generator so results are
// reproducible bit-for-bit across platforms; the C++ <random> distributions
// are implementation-defined and deliberately avoided.
// ---------------------------------------------------------------------------

std::uint64_t splitmix64_next(std::uint64_t& state);

// Stable 64-bit mix of an arbitrary list of words. Used to derive
// per-sample / per-step seeds from (seed, index, ...) tuples.
std::uint64_t hash_words(std::initializer_list<std::uint64_t> words);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Standard normal via Box-Muller on our own uniforms.
  double normal();

  // True with probability p.
  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  const T& pick(const std::vector<T>& v) {
    if (v.empty()) throw InputError("Rng::pick: empty choice list");
    return v[static_cast<std::size_t>(uniform_int(0, std::int64_t(v.size()) - 1))];
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, std::int64_t(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Child generator with a stream derived from (state, tag); advancing the
  // child never perturbs the parent.
  Rng child(std::uint64_t tag) { return Rng(hash_words({next_u64(), tag})); }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over raw bytes; used for charset fingerprints in checkpoints.
std::uint64_t fnv1a64(const void* data, std::size_t n);
std::string to_hex(std::uint64_t v);

// ---------------------------------------------------------------------------
// Process-wide runtime knobs.
// ---------------------------------------------------------------------------

// Pins the BLAS backend to one thread (results must not depend on machine
// load) and reads SVTR2_THREADS. Safe to call more than once.
void runtime_init();

// Worker cap from SVTR2_THREADS (default 1 so runs are exactly reproducible).
int worker_threads();

// When true, ops validate that produced values are finite and throw
// StateError on NaN/Inf. Defaults to on in debug builds, off in release.
bool nan_checks_enabled();
void set_nan_checks(bool on);

}  // namespace svtr2
