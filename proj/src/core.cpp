#include "powerpost/core.hpp"

#include <cmath>
#include <string>

namespace powerpost {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

StateVector::StateVector(Eigen::VectorXd values, std::optional<GridShape> grid)
    : values_(std::move(values)), grid_(grid) {
  if (values_.size() < 1) throw DimensionError("state vector must have length >= 1");
  if (grid_ && grid_->size() != size()) {
    throw DimensionError("grid " + std::to_string(grid_->height) + "x" +
                         std::to_string(grid_->width) + " does not match state length " +
                         std::to_string(size()));
  }
  if (!values_.allFinite()) throw DomainError("state vector has non-finite entries");
}

Observation::Observation(Eigen::VectorXd values) : values_(std::move(values)) {
  if (values_.size() < 1) throw DimensionError("observation must have length >= 1");
  if (!values_.allFinite()) throw DomainError("observation has non-finite entries");
}

PowerParams::PowerParams(double lambda, double alpha) : lambda_(lambda), alpha_(alpha) {
  if (!std::isfinite(lambda) || !std::isfinite(alpha) || lambda < 0.0 || alpha < 0.0) {
    throw ConfigError("powers must be finite and nonnegative");
  }
  if (lambda == 0.0 && alpha == 0.0) {
    throw ConfigError("lambda and alpha cannot both be zero (improper target)");
  }
}

NoiseSchedule build_schedule(double sigma_min, double sigma_max, std::size_t num_steps,
                             double rho) {
  if (!(sigma_min > 0.0) || !std::isfinite(sigma_max) || !(sigma_min < sigma_max)) {
    throw ConfigError("schedule requires 0 < sigma_min < sigma_max");
  }
  // Ranges this narrow cannot hold a strictly decreasing ladder with exact endpoints.
  if (sigma_max - sigma_min <= 1e-12 * sigma_max) {
    throw ConfigError("schedule range is degenerate");
  }
  if (num_steps < 2) throw ConfigError("schedule needs at least 2 levels");
  if (!(rho > 0.0) || !std::isfinite(rho)) throw ConfigError("rho must be positive");

  NoiseSchedule s;
  s.sigma_min_ = sigma_min;
  s.sigma_max_ = sigma_max;
  s.rho_ = rho;
  s.levels_.resize(num_steps);
  const double lo = std::pow(sigma_min, 1.0 / rho);
  const double hi = std::pow(sigma_max, 1.0 / rho);
  const double last = static_cast<double>(num_steps - 1);
  for (std::size_t i = 0; i < num_steps; ++i) {
    s.levels_[i] = std::pow(hi + (static_cast<double>(i) / last) * (lo - hi), rho);
  }
  s.levels_.front() = sigma_max;
  s.levels_.back() = sigma_min;
  for (std::size_t i = 1; i < num_steps; ++i) {
    if (!(s.levels_[i] < s.levels_[i - 1])) {
      throw ConfigError("schedule levels are not strictly decreasing; widen the range or use "
                        "fewer steps");
    }
  }
  return s;
}

Eigen::VectorXd mix_scores(const Eigen::VectorXd& s_post, const Eigen::VectorXd& s_prior,
                           const PowerParams& power) {
  if (s_post.size() != s_prior.size()) {
    throw DimensionError("mix_scores: posterior and prior score lengths differ");
  }
  return power.lambda() * s_post + (power.alpha() - power.lambda()) * s_prior;
}

Eigen::MatrixXd mix_scores(const Eigen::MatrixXd& s_post, const Eigen::MatrixXd& s_prior,
                           const PowerParams& power) {
  if (s_post.rows() != s_prior.rows() || s_post.cols() != s_prior.cols()) {
    throw DimensionError("mix_scores: posterior and prior score shapes differ");
  }
  return power.lambda() * s_post + (power.alpha() - power.lambda()) * s_prior;
}

Eigen::VectorXd ScoreSource::annealed_score(const StateVector& x, double sigma,
                                            const Observation* condition) const {
  if (x.size() != dimension()) {
    throw DimensionError("score source expects dimension " + std::to_string(dimension()) +
                         ", got " + std::to_string(x.size()));
  }
  Eigen::MatrixXd states = x.values();
  Eigen::MatrixXd out = annealed_scores(states, sigma, condition);
  return out.col(0);
}

std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index));
}

}  // namespace powerpost
