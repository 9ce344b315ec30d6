#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace c2f {

/// splitmix64 finalizer; used to mix seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a, stable across platforms (std::hash is not).
constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Child seed for (master, purpose, indices...). Every stochastic draw in a run
/// is keyed this way so that results do not depend on execution order.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                                 std::initializer_list<std::uint64_t> indices = {}) {
  std::uint64_t h = mix64(master ^ mix64(hash_string(purpose)));
  for (std::uint64_t i : indices) h = mix64(h ^ mix64(i + 0x632be59bd9b4e019ULL));
  return h;
}

/// Seeded random stream. Owned by a single worker.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  /// Uniform integer in [lo, hi].
  long uniform_int(long lo, long hi) {
    return std::uniform_int_distribution<long>(lo, hi)(engine_);
  }
  double normal() { return normal_(engine_); }
  long poisson(double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<long>(mean)(engine_);
  }

  /// Fill any Eigen dense object with standard normal draws (storage order).
  template <class Derived>
  void fill_normal(Eigen::DenseBase<Derived>& out) {
    using S = typename Derived::Scalar;
    for (Eigen::Index j = 0; j < out.size(); ++j) {
      out.derived().data()[j] = static_cast<S>(normal());
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace c2f
