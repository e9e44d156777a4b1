#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hf {

// Deterministic random source. All distributions are built from the raw
// mt19937_64 stream so that identical seeds reproduce identical draws on
// every build; the engine state serializes for checkpoint resume.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  // Unbiased draw in [0, n).
  std::uint64_t below(std::uint64_t n);
  // [0, 1) with 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal (polar Box-Muller, no cached spare).
  double normal();
  // Gamma(shape, 1), shape > 0 (Marsaglia-Tsang).
  double gamma(double shape);
  // Beta(a, b), a, b > 0.
  double beta(double a, double b);
  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  std::string state() const;
  void set_state(const std::string& s);

 private:
  // mt19937_64 state: 312 words plus position index.
  static constexpr int kWords = 312;
  void seed_engine(std::uint64_t seed);
  std::uint64_t words_[kWords];
  int pos_ = kWords;
};

// Stateless 64-bit mixer for deriving independent per-purpose seeds.
std::uint64_t mix_seed(std::uint64_t seed);
std::uint64_t seed_for(std::uint64_t master, const std::string& tag);

}  // namespace hf
