#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cda {

/// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Derives a child seed from a parent seed and a stream index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Derives a child seed from a parent seed and a stream label.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

/// Seedable generator passed explicitly to every initialization and shuffling site.
class Rng {
 public:
  using result_type = std::mt19937_64::result_type;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  double uniform();  // [0, 1)
  double normal(double mean, double stddev);
  /// Normal sample redrawn until it falls within two standard deviations.
  double truncated_normal(double stddev);
  std::size_t below(std::size_t n);  // uniform in [0, n)

 private:
  std::mt19937_64 engine_;
};

}  // namespace cda
