#include "powerpost/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

namespace powerpost {

namespace {

constexpr double kSymmetryTolerance = 1e-10;

void require_dims(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

void require_sigma(double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("sigma must be finite and >= 0");
}

// Inverse of an SPD matrix through its Cholesky factor.
Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw DomainError(std::string(what) + " is not SPD");
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
  return 0.5 * (inv + inv.transpose());
}

}  // namespace

GaussianDensity::GaussianDensity(Eigen::VectorXd mean, Eigen::MatrixXd covariance)
    : mean_(std::move(mean)), covariance_(std::move(covariance)) {
  if (mean_.size() < 1) throw DimensionError("Gaussian needs dimension >= 1");
  if (covariance_.rows() != mean_.size() || covariance_.cols() != mean_.size()) {
    throw DimensionError("covariance shape does not match mean length");
  }
  if (!mean_.allFinite() || !covariance_.allFinite()) {
    throw DomainError("Gaussian parameters must be finite");
  }
  const double scale = std::max(1.0, covariance_.cwiseAbs().maxCoeff());
  if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance * scale) {
    throw DomainError("covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance_);
  if (eig.info() != Eigen::Success) throw DomainError("covariance eigendecomposition failed");
  if (!(eig.eigenvalues().minCoeff() > 0.0)) throw DomainError("covariance is not positive definite");
  eigenvalues_ = eig.eigenvalues();
  eigenvectors_ = eig.eigenvectors();
}

Eigen::MatrixXd GaussianDensity::solve_annealed(const Eigen::MatrixXd& rhs, double sigma) const {
  require_dims(rhs.rows(), mean_.size(), "solve_annealed");
  const Eigen::VectorXd inv = (eigenvalues_.array() + sigma * sigma).inverse().matrix();
  Eigen::MatrixXd projected = eigenvectors_.transpose() * rhs;
  projected = inv.asDiagonal() * projected;
  return eigenvectors_ * projected;
}

double GaussianDensity::log_det_annealed(double sigma) const {
  return (eigenvalues_.array() + sigma * sigma).log().sum();
}

LinearGaussianModel::LinearGaussianModel(Eigen::MatrixXd operator_a, Eigen::MatrixXd noise_cov,
                                         GaussianDensity prior)
    : operator_a_(std::move(operator_a)), noise_cov_(std::move(noise_cov)), prior_(std::move(prior)) {
  if (operator_a_.rows() < 1) throw DimensionError("operator must have at least one row");
  require_dims(operator_a_.cols(), static_cast<Eigen::Index>(prior_.dimension()),
               "operator columns vs prior");
  if (noise_cov_.rows() != operator_a_.rows() || noise_cov_.cols() != operator_a_.rows()) {
    throw DimensionError("noise covariance must be m x m with m = operator rows");
  }
  if (!operator_a_.allFinite()) throw DomainError("operator has non-finite entries");
  const double scale = std::max(1.0, noise_cov_.cwiseAbs().maxCoeff());
  if ((noise_cov_ - noise_cov_.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance * scale) {
    throw DomainError("noise covariance is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(noise_cov_);
  if (llt.info() != Eigen::Success) throw DomainError("noise covariance is not SPD");
  back_projection_ = llt.solve(operator_a_).transpose();
  data_precision_ = back_projection_ * operator_a_;
  data_precision_ = 0.5 * (data_precision_ + data_precision_.transpose());
}

GaussianMixture::GaussianMixture(std::vector<double> weights, std::vector<GaussianDensity> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  if (components_.empty()) throw ConfigError("mixture needs at least one component");
  if (weights_.size() != components_.size()) {
    throw DimensionError("mixture weights and components differ in count");
  }
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("mixture weights must be >= 0");
  }
  const double total = std::accumulate(weights_.begin(), weights_.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("mixture weights must sum to 1");
  for (const auto& c : components_) {
    if (c.dimension() != components_.front().dimension()) {
      throw DimensionError("mixture components differ in dimension");
    }
  }
}

Eigen::MatrixXd annealed_gaussian_scores(const Eigen::MatrixXd& states, double sigma,
                                         const GaussianDensity& g) {
  require_sigma(sigma);
  require_dims(states.rows(), static_cast<Eigen::Index>(g.dimension()), "annealed_gaussian_score");
  Eigen::MatrixXd centered = states.colwise() - g.mean();
  return -g.solve_annealed(centered, sigma);
}

Eigen::VectorXd annealed_gaussian_score(const StateVector& x, double sigma, const GaussianDensity& g) {
  Eigen::MatrixXd states = x.values();
  return annealed_gaussian_scores(states, sigma, g).col(0);
}

Eigen::MatrixXd annealed_gmm_scores(const Eigen::MatrixXd& states, double sigma,
                                    const GaussianMixture& mix) {
  require_sigma(sigma);
  require_dims(states.rows(), static_cast<Eigen::Index>(mix.dimension()), "annealed_gmm_score");
  const auto k_count = mix.components().size();
  const Eigen::Index n = states.cols();
  const double d = static_cast<double>(mix.dimension());

  std::vector<Eigen::MatrixXd> solved(k_count);
  Eigen::MatrixXd log_terms(static_cast<Eigen::Index>(k_count), n);
  for (std::size_t k = 0; k < k_count; ++k) {
    const auto& comp = mix.components()[k];
    Eigen::MatrixXd centered = states.colwise() - comp.mean();
    solved[k] = comp.solve_annealed(centered, sigma);
    const Eigen::RowVectorXd quad = (centered.array() * solved[k].array()).colwise().sum();
    const double log_w = mix.weights()[k] > 0.0 ? std::log(mix.weights()[k])
                                                 : -std::numeric_limits<double>::infinity();
    const double norm = -0.5 * comp.log_det_annealed(sigma) -
                        0.5 * d * std::log(2.0 * std::numbers::pi);
    log_terms.row(static_cast<Eigen::Index>(k)) = (log_w + norm - 0.5 * quad.array()).matrix();
  }

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(states.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double top = log_terms.col(j).maxCoeff();
    Eigen::VectorXd resp = (log_terms.col(j).array() - top).exp().matrix();
    resp /= resp.sum();
    for (std::size_t k = 0; k < k_count; ++k) {
      const double r = resp[static_cast<Eigen::Index>(k)];
      if (r != 0.0) out.col(j) -= r * solved[k].col(j);
    }
  }
  return out;
}

Eigen::VectorXd annealed_gmm_score(const StateVector& x, double sigma, const GaussianMixture& mix) {
  Eigen::MatrixXd states = x.values();
  return annealed_gmm_scores(states, sigma, mix).col(0);
}

GaussianDensity power_posterior_closed_form(const LinearGaussianModel& model, const Observation& y,
                                            const PowerParams& power) {
  require_dims(static_cast<Eigen::Index>(y.size()), static_cast<Eigen::Index>(model.obs_dim()),
               "observation");
  const GaussianDensity& prior = model.prior();
  if (power.lambda() == 0.0) {
    return GaussianDensity(prior.mean(), prior.covariance() / power.alpha());
  }
  const Eigen::MatrixXd prior_precision = spd_inverse(prior.covariance(), "prior covariance");
  Eigen::MatrixXd precision =
      power.lambda() * model.data_precision() + power.alpha() * prior_precision;
  precision = 0.5 * (precision + precision.transpose());
  const Eigen::VectorXd info = power.lambda() * (model.back_projection() * y.values()) +
                               power.alpha() * (prior_precision * prior.mean());

  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0)) {
    throw DegeneratePosteriorError("power-posterior precision is singular");
  }
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(precision.rows(), precision.cols()));
  cov = 0.5 * (cov + cov.transpose());
  Eigen::VectorXd mean = llt.solve(info);
  try {
    return GaussianDensity(std::move(mean), std::move(cov));
  } catch (const DomainError&) {
    throw DegeneratePosteriorError("power-posterior covariance is numerically degenerate");
  }
}

GaussianPosteriorSource::GaussianPosteriorSource(LinearGaussianModel model, const Observation& y,
                                                 std::optional<GridShape> grid)
    : model_(std::move(model)),
      reference_y_(y.values()),
      posterior_(power_posterior_closed_form(model_, y, PowerParams(1.0, 1.0))),
      grid_(grid) {
  if (grid_ && grid_->size() != model_.state_dim()) {
    throw DimensionError("grid does not match model state dimension");
  }
  gain_ = posterior_.covariance() * model_.back_projection();
}

Eigen::MatrixXd GaussianPosteriorSource::annealed_scores(const Eigen::MatrixXd& states, double sigma,
                                                         const Observation* condition) const {
  if (condition == nullptr) return annealed_gaussian_scores(states, sigma, model_.prior());
  require_sigma(sigma);
  require_dims(static_cast<Eigen::Index>(condition->size()),
               static_cast<Eigen::Index>(model_.obs_dim()), "condition");
  require_dims(states.rows(), static_cast<Eigen::Index>(dimension()), "states");
  Eigen::VectorXd mean = posterior_.mean();
  if (condition->values() != reference_y_) mean += gain_ * (condition->values() - reference_y_);
  Eigen::MatrixXd centered = states.colwise() - mean;
  return -posterior_.solve_annealed(centered, sigma);
}

GaussianPosteriorSource posterior_score_source(const LinearGaussianModel& model, const Observation& y,
                                               std::optional<GridShape> grid) {
  return GaussianPosteriorSource(model, y, grid);
}

GaussianPriorSource::GaussianPriorSource(GaussianDensity prior, std::optional<GridShape> grid)
    : prior_(std::move(prior)), grid_(grid) {
  if (grid_ && grid_->size() != prior_.dimension()) {
    throw DimensionError("grid does not match prior dimension");
  }
}

Eigen::MatrixXd GaussianPriorSource::annealed_scores(const Eigen::MatrixXd& states, double sigma,
                                                     const Observation* condition) const {
  if (condition != nullptr) throw ConfigError("prior-only source has no conditional branch");
  return annealed_gaussian_scores(states, sigma, prior_);
}

MixturePriorSource::MixturePriorSource(GaussianMixture mix) : mix_(std::move(mix)) {}

Eigen::MatrixXd MixturePriorSource::annealed_scores(const Eigen::MatrixXd& states, double sigma,
                                                    const Observation* condition) const {
  if (condition != nullptr) throw ConfigError("prior-only source has no conditional branch");
  return annealed_gmm_scores(states, sigma, mix_);
}

}  // namespace powerpost
