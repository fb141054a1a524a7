#pragma once

// Shared domain types for power-scaled score-based sampling.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "powerpost/errors.hpp"

namespace powerpost {

struct GridShape {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const noexcept { return height * width; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// A field sample. Toy velocity grids are stored row-major (row = depth).
class StateVector {
 public:
  explicit StateVector(Eigen::VectorXd values, std::optional<GridShape> grid = std::nullopt);

  const Eigen::VectorXd& values() const noexcept { return values_; }
  const std::optional<GridShape>& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }

 private:
  Eigen::VectorXd values_;
  std::optional<GridShape> grid_;
};

/// Observed data (toy migration image or any summary statistic).
class Observation {
 public:
  explicit Observation(Eigen::VectorXd values);

  const Eigen::VectorXd& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }

 private:
  Eigen::VectorXd values_;
};

/// One simulated training or evaluation pair (x, y).
struct DataPair {
  StateVector x;
  Observation y;
};

/// Likelihood power `lambda` and prior power `alpha`.
class PowerParams {
 public:
  PowerParams(double lambda, double alpha);

  double lambda() const noexcept { return lambda_; }
  double alpha() const noexcept { return alpha_; }

 private:
  double lambda_;
  double alpha_;
};

/// Descending noise levels sigma_0 = sigma_max > ... > sigma_{N-1} = sigma_min.
class NoiseSchedule {
 public:
  double sigma_min() const noexcept { return sigma_min_; }
  double sigma_max() const noexcept { return sigma_max_; }
  double rho() const noexcept { return rho_; }
  std::size_t size() const noexcept { return levels_.size(); }
  double operator[](std::size_t i) const { return levels_[i]; }
  std::span<const double> levels() const noexcept { return levels_; }

 private:
  friend NoiseSchedule build_schedule(double, double, std::size_t, double);
  NoiseSchedule() = default;

  double sigma_min_ = 0.0;
  double sigma_max_ = 0.0;
  double rho_ = 0.0;
  std::vector<double> levels_;
};

/// Power-law spaced ladder
///   sigma_i = (sigma_max^(1/rho) + i/(N-1) * (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho
/// with both endpoints pinned exactly.
NoiseSchedule build_schedule(double sigma_min, double sigma_max, std::size_t num_steps,
                             double rho = 7.0);

/// lambda * s_post + (alpha - lambda) * s_prior, elementwise.
Eigen::VectorXd mix_scores(const Eigen::VectorXd& s_post, const Eigen::VectorXd& s_prior,
                           const PowerParams& power);
/// Column-batched form of mix_scores.
Eigen::MatrixXd mix_scores(const Eigen::MatrixXd& s_post, const Eigen::MatrixXd& s_prior,
                           const PowerParams& power);

/// Annealed score provider. The unconditional branch (no condition) is the prior score
/// grad log p_sigma(x); the conditional branch is the posterior score grad log p_sigma(x | y).
///
/// Implementations are immutable after construction and are queried concurrently.
class ScoreSource {
 public:
  virtual ~ScoreSource() = default;

  virtual std::size_t dimension() const = 0;
  virtual std::optional<GridShape> grid() const { return std::nullopt; }

  /// Scores for every column of `states` (d x n).
  virtual Eigen::MatrixXd annealed_scores(const Eigen::MatrixXd& states, double sigma,
                                          const Observation* condition) const = 0;

  Eigen::VectorXd annealed_score(const StateVector& x, double sigma,
                                 const Observation* condition = nullptr) const;
};

/// Seeded generator owned by exactly one chain or task.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  void fill_normal(Eigen::Ref<Eigen::VectorXd> out) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal_(engine_);
  }
  Eigen::VectorXd normal_vector(std::size_t n) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    fill_normal(v);
    return v;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Seed for the stream of `index` under a master `seed` (splitmix64 of seed xor mixed index).
std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t index);

/// Stream tags for derived generators that are not chain-indexed.
inline constexpr std::uint64_t kPilotStreamTag = 0x70696c6f74000000ULL;
inline constexpr std::uint64_t kNullTokenStreamTag = 0x6e756c6c00000000ULL;

bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m);

}  // namespace powerpost
