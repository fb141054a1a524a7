#pragma once

// Variance-exploding predictor-corrector sampling of power-scaled posteriors.
//
// Chains are advanced in fixed blocks of kChainBlock columns. Every chain draws
// from its own generator seeded with derive_stream(seed, chain_index), and the
// block partition does not depend on the worker count, so results are bitwise
// reproducible for any degree of parallelism.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "powerpost/core.hpp"

namespace powerpost {

inline constexpr std::size_t kChainBlock = 32;

enum class PredictorKind { kEuler, kHeun };

enum class CorrectorStepRule {
  // delta_k = 2 snr^2 d / E||s||^2, with the expectation taken over a fixed pilot
  // ensemble at each level and then frozen for all chains.
  kCalibrated,
  // delta = (snr * sigma)^2.
  kNoiseScaled,
};

struct SamplerConfig {
  NoiseSchedule schedule = build_schedule(0.002, 80.0, 64, 7.0);
  double churn = 0.0;
  std::size_t corrector_steps = 20;
  double corrector_snr = 0.16;
  CorrectorStepRule step_rule = CorrectorStepRule::kCalibrated;
  std::size_t pilot_chains = 64;
  PredictorKind predictor = PredictorKind::kEuler;
  std::size_t num_chains = 1;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const;
};

struct LevelDiagnostics {
  double sigma = 0.0;
  double corrector_step = 0.0;  // 0 at the first level (no correction there)
  double mean_score_norm = 0.0;
};

struct SampleBatch {
  std::vector<StateVector> samples;
  PowerParams power{1.0, 1.0};
  std::vector<LevelDiagnostics> diagnostics;

  /// d x num_chains matrix of terminal samples.
  Eigen::MatrixXd as_matrix() const;
};

/// Effective score for a batch of states at noise level sigma.
using ScoreFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& states, double sigma)>;

/// One Euler-Maruyama step of the reverse VE SDE with sigma(t) = t from sigma_cur to sigma_next:
///   x' = x + (sigma_cur - sigma_next) * sigma_cur * (1 + churn * sigma_cur) * score
///          + sqrt(2 churn) * sigma_cur * sqrt(sigma_cur - sigma_next) * z
/// churn = 0 is the probability-flow ODE step and draws no randomness.
StateVector predictor_step(const StateVector& x, double sigma_cur, double sigma_next,
                           const Eigen::VectorXd& score, double churn, Rng& rng);

/// `steps` unadjusted Langevin iterations x <- x + (delta/2) s(x) + sqrt(delta) z with
/// delta = (snr * sigma)^2.
StateVector langevin_correct(const StateVector& x, double sigma, const ScoreFn& score, std::size_t steps,
                             double snr, Rng& rng);

/// Same update with an explicit step size delta.
StateVector langevin_correct_with_step(const StateVector& x, double sigma, const ScoreFn& score,
                                       std::size_t steps, double delta, Rng& rng);

/// Block forms used by the sampler; column j uses rngs[j].
void predictor_update(Eigen::MatrixXd& states, const Eigen::MatrixXd& scores, double sigma_cur,
                      double sigma_next, double churn, std::span<Rng> rngs);
void corrector_update(Eigen::MatrixXd& states, const ScoreFn& score, double sigma, double delta,
                      std::size_t steps, std::span<Rng> rngs);

/// Runs the full predictor-corrector ladder with an arbitrary effective score.
SampleBatch run_annealed_sampler(const ScoreFn& score, std::size_t dimension,
                                 std::optional<GridShape> grid, const SamplerConfig& cfg,
                                 const PowerParams& power = PowerParams(1.0, 1.0));

/// Samples p(y|x)^lambda p(x)^alpha using lambda * s_post + (alpha - lambda) * s_prior at each level.
SampleBatch sample_power_posterior(const ScoreSource& source, const Observation& y,
                                   const PowerParams& power, const SamplerConfig& cfg);

/// Samples p(x)^alpha. Only the unconditional branch of `source` is queried.
SampleBatch sample_prior_power(const ScoreSource& source, double alpha, const SamplerConfig& cfg);

}  // namespace powerpost
