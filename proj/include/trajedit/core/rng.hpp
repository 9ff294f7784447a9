// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "trajedit/core/tensor.hpp"

namespace trajedit {

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

/// Explicit seeded generator. Every noise draw in the library goes through
/// one of these; nothing draws implicitly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  template <class Real = double>
  BasicLatent<Real> normal_like(Shape3 shape) {
    BasicLatent<Real> out(shape);
    for (auto& v : out.flat()) v = static_cast<Real>(normal());
    ++latent_draws_;
    return out;
  }

  template <class Real = double>
  BasicLatent<Real> uniform_like(Shape3 shape, double lo, double hi) {
    BasicLatent<Real> out(shape);
    for (auto& v : out.flat()) v = static_cast<Real>(uniform(lo, hi));
    return out;
  }

  /// Number of full-latent noise draws made through normal_like.
  std::uint64_t latent_draws() const noexcept { return latent_draws_; }
  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uint64_t latent_draws_ = 0;
};

}  // namespace trajedit
