#pragma once

// Closed-form Gaussian and Gaussian-mixture score sources, and the exact
// power-scaled posterior of the conjugate linear-Gaussian model.

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "powerpost/core.hpp"

namespace powerpost {

/// N(mean, covariance) with a cached symmetric eigendecomposition, so that
/// (covariance + sigma^2 I)^-1 can be applied for any sigma without refactoring.
class GaussianDensity {
 public:
  GaussianDensity(Eigen::VectorXd mean, Eigen::MatrixXd covariance);

  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  const Eigen::MatrixXd& covariance() const noexcept { return covariance_; }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(mean_.size()); }
  const Eigen::VectorXd& eigenvalues() const noexcept { return eigenvalues_; }

  /// (covariance + sigma^2 I)^-1 * rhs, column by column.
  Eigen::MatrixXd solve_annealed(const Eigen::MatrixXd& rhs, double sigma) const;
  /// log det(covariance + sigma^2 I).
  double log_det_annealed(double sigma) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;
  Eigen::MatrixXd eigenvectors_;
  Eigen::VectorXd eigenvalues_;
};

/// y = A x + e, e ~ N(0, noise_cov), x ~ prior.
class LinearGaussianModel {
 public:
  LinearGaussianModel(Eigen::MatrixXd operator_a, Eigen::MatrixXd noise_cov,
                      GaussianDensity prior);

  const Eigen::MatrixXd& operator_a() const noexcept { return operator_a_; }
  const Eigen::MatrixXd& noise_cov() const noexcept { return noise_cov_; }
  const GaussianDensity& prior() const noexcept { return prior_; }
  std::size_t state_dim() const noexcept { return static_cast<std::size_t>(operator_a_.cols()); }
  std::size_t obs_dim() const noexcept { return static_cast<std::size_t>(operator_a_.rows()); }

  /// A^T noise_cov^-1 A (the data-precision term).
  const Eigen::MatrixXd& data_precision() const noexcept { return data_precision_; }
  /// A^T noise_cov^-1 (maps observations into the state space).
  const Eigen::MatrixXd& back_projection() const noexcept { return back_projection_; }

 private:
  Eigen::MatrixXd operator_a_;
  Eigen::MatrixXd noise_cov_;
  GaussianDensity prior_;
  Eigen::MatrixXd back_projection_;
  Eigen::MatrixXd data_precision_;
};

class GaussianMixture {
 public:
  GaussianMixture(std::vector<double> weights, std::vector<GaussianDensity> components);

  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<GaussianDensity>& components() const noexcept { return components_; }
  std::size_t dimension() const noexcept { return components_.front().dimension(); }

 private:
  std::vector<double> weights_;
  std::vector<GaussianDensity> components_;
};

/// -(Sigma + sigma^2 I)^-1 (x - mu). sigma = 0 is allowed.
Eigen::VectorXd annealed_gaussian_score(const StateVector& x, double sigma,
                                        const GaussianDensity& g);
Eigen::MatrixXd annealed_gaussian_scores(const Eigen::MatrixXd& states, double sigma,
                                         const GaussianDensity& g);

/// Exact score of sum_k w_k N(mu_k, Sigma_k + sigma^2 I), log-sum-exp stabilized.
Eigen::VectorXd annealed_gmm_score(const StateVector& x, double sigma, const GaussianMixture& mix);
Eigen::MatrixXd annealed_gmm_scores(const Eigen::MatrixXd& states, double sigma,
                                    const GaussianMixture& mix);

/// The Gaussian proportional to p(y|x)^lambda p(x)^alpha:
///   precision = lambda A^T Se^-1 A + alpha S0^-1
///   mean      = precision^-1 (lambda A^T Se^-1 y + alpha S0^-1 mu0)
/// With lambda = 0 this returns N(mu0, S0 / alpha) exactly.
GaussianDensity power_posterior_closed_form(const LinearGaussianModel& model,
                                            const Observation& y, const PowerParams& power);

/// Exact annealed prior and posterior scores of a linear-Gaussian model.
/// The conditional branch accepts any observation of the model's data dimension.
class GaussianPosteriorSource final : public ScoreSource {
 public:
  GaussianPosteriorSource(LinearGaussianModel model, const Observation& y,
                          std::optional<GridShape> grid = std::nullopt);

  std::size_t dimension() const override { return model_.state_dim(); }
  std::optional<GridShape> grid() const override { return grid_; }
  Eigen::MatrixXd annealed_scores(const Eigen::MatrixXd& states, double sigma,
                                  const Observation* condition) const override;

  const LinearGaussianModel& model() const noexcept { return model_; }
  /// Standard (lambda = alpha = 1) posterior for the reference observation.
  const GaussianDensity& posterior() const noexcept { return posterior_; }

 private:
  LinearGaussianModel model_;
  Eigen::VectorXd reference_y_;
  GaussianDensity posterior_;
  Eigen::MatrixXd gain_;  // d(posterior mean)/dy
  std::optional<GridShape> grid_;
};

GaussianPosteriorSource posterior_score_source(const LinearGaussianModel& model,
                                               const Observation& y,
                                               std::optional<GridShape> grid = std::nullopt);

/// Unconditional-only source for a Gaussian prior.
class GaussianPriorSource final : public ScoreSource {
 public:
  explicit GaussianPriorSource(GaussianDensity prior,
                               std::optional<GridShape> grid = std::nullopt);

  std::size_t dimension() const override { return prior_.dimension(); }
  std::optional<GridShape> grid() const override { return grid_; }
  Eigen::MatrixXd annealed_scores(const Eigen::MatrixXd& states, double sigma,
                                  const Observation* condition) const override;

 private:
  GaussianDensity prior_;
  std::optional<GridShape> grid_;
};

/// Unconditional-only source for a Gaussian-mixture prior.
class MixturePriorSource final : public ScoreSource {
 public:
  explicit MixturePriorSource(GaussianMixture mix);

  std::size_t dimension() const override { return mix_.dimension(); }
  Eigen::MatrixXd annealed_scores(const Eigen::MatrixXd& states, double sigma,
                                  const Observation* condition) const override;

 private:
  GaussianMixture mix_;
};

}  // namespace powerpost
