#include "hf/rng.hpp"

#include <cmath>
#include <sstream>

#include "hf/common.hpp"

namespace hf {

namespace {
constexpr std::uint64_t kUpperMask = 0xFFFFFFFF80000000ull;
constexpr std::uint64_t kLowerMask = 0x7FFFFFFFull;
constexpr int kMid = 156;
constexpr std::uint64_t kMatrixA = 0xB5026F5AA96619E9ull;
}  // namespace

Rng::Rng(std::uint64_t seed) { seed_engine(seed); }

void Rng::seed_engine(std::uint64_t seed) {
  words_[0] = seed;
  for (int i = 1; i < kWords; ++i) {
    words_[i] = 6364136223846793005ull * (words_[i - 1] ^ (words_[i - 1] >> 62)) +
                static_cast<std::uint64_t>(i);
  }
  pos_ = kWords;
}

std::uint64_t Rng::next_u64() {
  if (pos_ >= kWords) {
    for (int i = 0; i < kWords; ++i) {
      const std::uint64_t x =
          (words_[i] & kUpperMask) | (words_[(i + 1) % kWords] & kLowerMask);
      std::uint64_t xa = x >> 1;
      if (x & 1ull) xa ^= kMatrixA;
      words_[i] = words_[(i + kMid) % kWords] ^ xa;
    }
    pos_ = 0;
  }
  std::uint64_t y = words_[pos_++];
  y ^= (y >> 29) & 0x5555555555555555ull;
  y ^= (y << 17) & 0x71D67FFFEDA60000ull;
  y ^= (y << 37) & 0xFFF7EEE000000000ull;
  y ^= y >> 43;
  return y;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ValueError("Rng::below: bound must be positive");
  const std::uint64_t rem = (~std::uint64_t{0}) % n;
  const std::uint64_t limit = ~std::uint64_t{0} - rem;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x > limit);
  return x % n;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

double Rng::gamma(double shape) {
  if (!(shape > 0.0)) throw ValueError("Rng::gamma: shape must be positive");
  if (shape < 1.0) {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double Rng::beta(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValueError("Rng::beta: parameters must be positive");
  const double x = gamma(a);
  const double y = gamma(b);
  const double s = x + y;
  if (s == 0.0) return 0.5;
  return x / s;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

std::string Rng::state() const {
  std::ostringstream out;
  out << pos_;
  for (int i = 0; i < kWords; ++i) out << ' ' << words_[i];
  return out.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream in(s);
  int pos = 0;
  if (!(in >> pos) || pos < 0 || pos > kWords) {
    throw ValueError("Rng::set_state: malformed state string");
  }
  std::uint64_t words[kWords];
  for (int i = 0; i < kWords; ++i) {
    if (!(in >> words[i])) throw ValueError("Rng::set_state: malformed state string");
  }
  pos_ = pos;
  for (int i = 0; i < kWords; ++i) words_[i] = words[i];
}

std::uint64_t mix_seed(std::uint64_t seed) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t seed_for(std::uint64_t master, const std::string& tag) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return mix_seed(master ^ h);
}

}  // namespace hf
