#include "powerpost/verification.hpp"

#include <algorithm>
#include <cmath>

#include "powerpost/analytic.hpp"
#include "powerpost/denoiser.hpp"
#include "powerpost/sampler.hpp"

namespace powerpost {

namespace {

LinearGaussianModel reference_model() {
  Eigen::Matrix2d prior_cov{{1.0, 0.3}, {0.3, 0.8}};
  Eigen::Matrix2d a{{1.0, 0.5}, {-0.3, 0.8}};
  Eigen::Matrix2d noise{{0.5, 0.1}, {0.1, 0.4}};
  return LinearGaussianModel(a, noise, GaussianDensity(Eigen::Vector2d(0.2, -0.1), prior_cov));
}

Observation reference_observation() { return Observation(Eigen::Vector2d(0.7, -0.4)); }

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& samples) {
  const Eigen::VectorXd mean = samples.rowwise().mean();
  const Eigen::MatrixXd centered = samples.colwise() - mean;
  return centered * centered.transpose() / static_cast<double>(samples.cols() - 1);
}

void moment_suite(const VerifySettings& s, std::vector<CheckResult>& out) {
  const LinearGaussianModel model = reference_model();
  const Observation y = reference_observation();
  const GaussianPosteriorSource source(model, y);
  SamplerConfig cfg;
  cfg.num_chains = s.chains;
  cfg.seed = s.seed;
  cfg.workers = s.workers;

  double worst_mean = 0.0, worst_cov = 0.0;
  nlohmann::json cells = nlohmann::json::array();
  for (double lambda : {0.5, 1.0, 2.0}) {
    for (double alpha : {0.5, 1.0, 2.0}) {
      const PowerParams power(lambda, alpha);
      const GaussianDensity exact = power_posterior_closed_form(model, y, power);
      const Eigen::MatrixXd x = sample_power_posterior(source, y, power, cfg).as_matrix();
      const Eigen::VectorXd sd = exact.covariance().diagonal().cwiseSqrt();
      const double mean_err = ((x.rowwise().mean() - exact.mean()).cwiseAbs().cwiseQuotient(sd)).maxCoeff();
      const double cov_err = (sample_covariance(x) - exact.covariance()).norm() / exact.covariance().norm();
      worst_mean = std::max(worst_mean, mean_err);
      worst_cov = std::max(worst_cov, cov_err);
      cells.push_back({{"lambda", lambda}, {"alpha", alpha}, {"mean_error", mean_err}, {"cov_error", cov_err}});
    }
  }
  out.push_back({"moment_matching_mean", worst_mean, s.tol_mean, worst_mean <= s.tol_mean,
                 {{"chains", s.chains}, {"cells", cells}}});
  out.push_back({"moment_matching_covariance", worst_cov, s.tol_cov, worst_cov <= s.tol_cov,
                 {{"chains", s.chains}, {"cells", cells}}});
}

void reduction_suite(const VerifySettings& s, std::vector<CheckResult>& out) {
  const LinearGaussianModel model = reference_model();
  const Observation y = reference_observation();
  const GaussianPosteriorSource source(model, y);
  SamplerConfig cfg;
  cfg.num_chains = 256;
  cfg.seed = s.seed;
  cfg.workers = s.workers;
  cfg.churn = 0.5;

  const Eigen::MatrixXd mixed = sample_power_posterior(source, y, PowerParams(1.0, 1.0), cfg).as_matrix();
  const ScoreFn posterior = [&](const Eigen::MatrixXd& x, double sigma) {
    return source.annealed_scores(x, sigma, &y);
  };
  const Eigen::MatrixXd plain = run_annealed_sampler(posterior, 2, std::nullopt, cfg).as_matrix();
  const double d1 = (mixed - plain).cwiseAbs().maxCoeff();
  out.push_back({"reduction_standard_posterior", d1, 0.0, mixed == plain, {{"chains", cfg.num_chains}}});

  const Eigen::MatrixXd zero = sample_power_posterior(source, y, PowerParams(0.0, 1.0), cfg).as_matrix();
  const Eigen::MatrixXd prior = sample_prior_power(source, 1.0, cfg).as_matrix();
  const double d2 = (zero - prior).cwiseAbs().maxCoeff();
  out.push_back({"reduction_prior", d2, 0.0, zero == prior, {{"chains", cfg.num_chains}}});
}

std::vector<DataPair> small_batch(Rng& rng, std::size_t n) {
  std::vector<DataPair> batch;
  for (std::size_t i = 0; i < n; ++i) {
    batch.push_back({StateVector(rng.normal_vector(2)), Observation(rng.normal_vector(2))});
  }
  return batch;
}

void gradient_suite(const VerifySettings& s, std::vector<CheckResult>& out) {
  constexpr double h = 1e-5;
  TrainConfig tc;
  tc.cfg_drop_prob = 0.2;
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 10; ++draw) {
    Rng setup(derive_stream(s.seed, 100 + draw));
    DenoiserParams params = init_denoiser(2, 2, {8}, setup.next_u64());
    const std::vector<DataPair> batch = small_batch(setup, 4);
    const Rng noise(setup.next_u64());

    Rng r0 = noise;
    const DenoiserGradient grad = edm_loss(params, batch, tc, r0).gradient;
    const Eigen::VectorXd g = grad.flatten();
    Eigen::VectorXd theta = params.flatten();
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double keep = theta[i];
      theta[i] = keep + h;
      params.assign(theta);
      Rng rp = noise;
      const double up = edm_loss(params, batch, tc, rp).loss;
      theta[i] = keep - h;
      params.assign(theta);
      Rng rm = noise;
      const double down = edm_loss(params, batch, tc, rm).loss;
      theta[i] = keep;
      params.assign(theta);
      const double fd = (up - down) / (2.0 * h);
      const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - g[i]) / scale);
    }
  }
  out.push_back({"gradient_check", worst, s.tol_grad, worst <= s.tol_grad,
                 {{"draws", 10}, {"hidden", {8}}, {"state_dim", 2}, {"step", h}}});
}

void dropout_suite(const VerifySettings& s, std::vector<CheckResult>& out) {
  constexpr std::size_t draws = 100000;
  TrainConfig tc;
  Rng rng(derive_stream(s.seed, 200));
  const DenoiserParams params = init_denoiser(2, 2, {8}, rng.next_u64());
  const std::vector<DataPair> batch = small_batch(rng, draws);
  const std::size_t dropped = edm_loss(params, batch, tc, rng).dropped;
  const double rate = static_cast<double>(dropped) / static_cast<double>(draws);
  const double err = std::abs(rate - tc.cfg_drop_prob);
  out.push_back({"cfg_dropout_rate", err, s.tol_dropout, err <= s.tol_dropout,
                 {{"draws", draws}, {"rate", rate}, {"target", tc.cfg_drop_prob}}});
}

}  // namespace

std::vector<CheckResult> run_verification_suites(const VerifySettings& settings) {
  std::vector<CheckResult> checks;
  moment_suite(settings, checks);
  reduction_suite(settings, checks);
  gradient_suite(settings, checks);
  dropout_suite(settings, checks);
  return checks;
}

nlohmann::json report_json(const std::vector<CheckResult>& checks) {
  nlohmann::json list = nlohmann::json::array();
  bool all = true;
  for (const auto& c : checks) {
    list.push_back({{"name", c.name},
                    {"measured", c.measured},
                    {"tolerance", c.tolerance},
                    {"passed", c.passed},
                    {"details", c.details}});
    all = all && c.passed;
  }
  return {{"passed", all}, {"checks", list}};
}

}  // namespace powerpost
