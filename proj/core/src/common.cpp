#include "svtr2/common.hpp"

#include <cmath>
#include <cstdlib>

extern "C" void openblas_set_num_threads(int);

namespace svtr2 {

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_words(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x2545f4914f6cdd1dULL;
  for (std::uint64_t w : words) {
    h ^= w + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    std::uint64_t s = h;
    h = splitmix64_next(s);
  }
  return h;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw InputError(str_cat("uniform_int: empty range [", lo, ",", hi, "]"));
  std::uint64_t span = std::uint64_t(hi - lo) + 1;
  if (span == 0) return std::int64_t(next_u64());  // full 64-bit range
  // Rejection-free multiply-shift; bias is < 2^-64 * span, irrelevant here,
  // and the mapping is a fixed function of the raw stream (portable).
  unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * span;
  return lo + std::int64_t(wide >> 64);
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 nudged away from 0 so the log is finite.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[std::size_t(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

namespace {
int g_workers = 1;
bool g_init_done = false;
#ifdef NDEBUG
bool g_nan_checks = false;
#else
bool g_nan_checks = true;
#endif
}  // namespace

void runtime_init() {
  if (g_init_done) return;
  g_init_done = true;
  openblas_set_num_threads(1);
  if (const char* env = std::getenv("SVTR2_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v >= 1 && v <= 256) g_workers = int(v);
  }
}

int worker_threads() {
  runtime_init();
  return g_workers;
}

bool nan_checks_enabled() { return g_nan_checks; }
void set_nan_checks(bool on) { g_nan_checks = on; }

}  // namespace svtr2
