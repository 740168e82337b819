#include "lami/tensor.hpp"

#include <cmath>

namespace lami {

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
  return fnv1a64(s.data(), s.size(), seed);
}

std::uint64_t parameter_digest(const ParameterRefs& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter* p : params) {
    h = fnv1a64(p->name, h);
    const std::int64_t shape[2] = {p->value.rows(), p->value.cols()};
    h = fnv1a64(shape, sizeof(shape), h);
    h = fnv1a64(p->value.data(), sizeof(double) * static_cast<std::size_t>(p->value.size()), h);
  }
  return h;
}

// splitmix64 finaliser
std::uint64_t Rng::mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::stream(std::string_view name) const {
  return Rng(mix(seed_ ^ fnv1a64(name)));
}

Rng Rng::stream(std::uint64_t index) const {
  return Rng(mix(seed_ + 0x632be59bd9b4e019ULL * (index + 1)));
}

double Rng::uniform(double lo, double hi) {
  // 53 random bits, independent of the standard library's distribution implementation
  const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double Rng::normal(double mean, double stddev) {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t Rng::index(std::size_t n) {
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
  return m;
}

}  // namespace lami
