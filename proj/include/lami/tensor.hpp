#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace lami {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

/// A named, owned weight tensor. Frozen parameters enter a tape as constants.
struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = true;
};

using ParameterRefs = std::vector<Parameter*>;

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Digest of parameter names, shapes and values; identical values give identical digests.
std::uint64_t parameter_digest(const ParameterRefs& params);

/// Seeded generator split into independent named sub-streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix(seed)) {}

  /// Derive an independent stream, e.g. rng.stream("split").
  [[nodiscard]] Rng stream(std::string_view name) const;
  [[nodiscard]] Rng stream(std::uint64_t index) const;

  std::mt19937_64& engine() { return engine_; }
  std::uint64_t seed() const { return seed_; }

  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  std::size_t index(std::size_t n);

  static std::uint64_t mix(std::uint64_t x);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Glorot-uniform initialised matrix.
Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng);
Matrix random_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev);

}  // namespace lami
