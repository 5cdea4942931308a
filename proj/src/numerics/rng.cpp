#include <cmath>
#include <numbers>

#include "knobs/numerics.hpp"

namespace knobs {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t SeededRng::next_u64() {
  ++counter_;
  return mix64(seed_ + counter_ * 0x9e3779b97f4a7c15ULL);
}

double SeededRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double SeededRng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return mean + stddev * r * std::cos(theta);
}

std::size_t SeededRng::below(std::size_t n) {
  if (n == 0) throw ConfigError("SeededRng::below(0)");
  // Lemire's multiply-shift; bias is negligible at the sizes used here.
  const unsigned __int128 prod = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::size_t>(prod >> 64);
}

SeededRng SeededRng::fork(std::uint64_t salt) const {
  return SeededRng(mix64(seed_ ^ mix64(salt + 0x632be59bd9b4e019ULL)));
}

}  // namespace knobs
