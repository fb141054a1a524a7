#include "powerpost/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace powerpost {

namespace {

struct BlockResult {
  Eigen::MatrixXd states;
  std::vector<double> score_norm_sums;  // per level
  std::exception_ptr error;
  std::size_t failed_chain = 0;
};

// Index of the first non-finite column, or -1.
Eigen::Index first_bad_column(const Eigen::MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (!m.col(j).allFinite()) return j;
  }
  return -1;
}

void check_block(const Eigen::MatrixXd& states, std::size_t level, double sigma,
                 std::size_t first_chain) {
  const Eigen::Index bad = first_bad_column(states);
  if (bad >= 0) throw DivergenceError(level, sigma, first_chain + static_cast<std::size_t>(bad));
}

Eigen::MatrixXd initial_states(std::size_t dimension, double sigma_max, std::span<Rng> rngs) {
  Eigen::MatrixXd states(static_cast<Eigen::Index>(dimension), static_cast<Eigen::Index>(rngs.size()));
  for (std::size_t j = 0; j < rngs.size(); ++j) {
    rngs[j].fill_normal(states.col(static_cast<Eigen::Index>(j)));
  }
  states *= sigma_max;
  return states;
}

// One level transition sigma_cur -> sigma_next; returns the scores at sigma_cur.
Eigen::MatrixXd predict(Eigen::MatrixXd& states, const ScoreFn& score, double sigma_cur,
                        double sigma_next, const SamplerConfig& cfg, std::span<Rng> rngs) {
  Eigen::MatrixXd s = score(states, sigma_cur);
  if (cfg.predictor == PredictorKind::kHeun && sigma_next > 0.0) {
    const double dt = sigma_cur - sigma_next;
    const double drift_cur = sigma_cur * (1.0 + cfg.churn * sigma_cur);
    Eigen::MatrixXd euler = states + (dt * drift_cur) * s;
    const Eigen::MatrixXd s_next = score(euler, sigma_next);
    const double drift_next = sigma_next * (1.0 + cfg.churn * sigma_next);
    // x' = x + dt * (drift_cur * s + drift_next * s_next) / 2, written as a predictor update
    // with an equivalent score so the noise path is shared with the Euler step.
    const Eigen::MatrixXd averaged = (drift_cur * s + drift_next * s_next) / (2.0 * drift_cur);
    predictor_update(states, averaged, sigma_cur, sigma_next, cfg.churn, rngs);
  } else {
    predictor_update(states, s, sigma_cur, sigma_next, cfg.churn, rngs);
  }
  return s;
}

double calibrated_step(const Eigen::MatrixXd& scores, double snr, double sigma) {
  const double mean_sq = scores.colwise().squaredNorm().mean();
  const double d = static_cast<double>(scores.rows());
  if (!(mean_sq > 0.0) || !std::isfinite(mean_sq)) return (snr * sigma) * (snr * sigma);
  return 2.0 * snr * snr * d / mean_sq;
}

// Runs a synchronous pilot ensemble and returns the corrector step for each level (index k is
// the step used after moving onto level k; entry 0 is unused).
std::vector<double> calibrate_steps(const ScoreFn& score, std::size_t dimension,
                                    const SamplerConfig& cfg) {
  const auto& sched = cfg.schedule;
  std::vector<double> steps(sched.size(), 0.0);
  const std::uint64_t pilot_seed = derive_stream(cfg.seed, kPilotStreamTag);
  std::vector<Rng> rngs;
  rngs.reserve(cfg.pilot_chains);
  for (std::size_t i = 0; i < cfg.pilot_chains; ++i) rngs.emplace_back(derive_stream(pilot_seed, i));

  Eigen::MatrixXd states = initial_states(dimension, sched.sigma_max(), rngs);
  for (std::size_t k = 0; k + 1 < sched.size(); ++k) {
    predict(states, score, sched[k], sched[k + 1], cfg, rngs);
    check_block(states, k, sched[k], 0);
    const double sigma = sched[k + 1];
    const double delta = calibrated_step(score(states, sigma), cfg.corrector_snr, sigma);
    steps[k + 1] = delta;
    corrector_update(states, score, sigma, delta, cfg.corrector_steps, rngs);
    check_block(states, k + 1, sigma, 0);
  }
  return steps;
}

BlockResult run_block(const ScoreFn& score, std::size_t dimension, const SamplerConfig& cfg,
                      const std::vector<double>& steps, std::size_t first_chain, std::size_t count) {
  BlockResult result;
  const auto& sched = cfg.schedule;
  result.score_norm_sums.assign(sched.size(), 0.0);
  try {
    std::vector<Rng> rngs;
    rngs.reserve(count);
    for (std::size_t j = 0; j < count; ++j) rngs.emplace_back(derive_stream(cfg.seed, first_chain + j));

    Eigen::MatrixXd states = initial_states(dimension, sched.sigma_max(), rngs);
    for (std::size_t k = 0; k + 1 < sched.size(); ++k) {
      const Eigen::MatrixXd s = predict(states, score, sched[k], sched[k + 1], cfg, rngs);
      result.score_norm_sums[k] = s.colwise().norm().sum();
      check_block(states, k, sched[k], first_chain);
      corrector_update(states, score, sched[k + 1], steps[k + 1], cfg.corrector_steps, rngs);
      check_block(states, k + 1, sched[k + 1], first_chain);
    }
    result.states = std::move(states);
  } catch (const DivergenceError& e) {
    result.error = std::current_exception();
    result.failed_chain = e.chain();
  } catch (...) {
    result.error = std::current_exception();
    result.failed_chain = first_chain;
  }
  return result;
}

}  // namespace

void SamplerConfig::validate() const {
  if (!(churn >= 0.0) || !std::isfinite(churn)) throw ConfigError("churn must be >= 0");
  if (!(corrector_snr > 0.0) || corrector_snr > 1.0) throw ConfigError("corrector_snr must lie in (0, 1]");
  if (num_chains < 1) throw ConfigError("num_chains must be >= 1");
  if (step_rule == CorrectorStepRule::kCalibrated && corrector_steps > 0 && pilot_chains < 1) {
    throw ConfigError("calibrated corrector needs at least one pilot chain");
  }
}

Eigen::MatrixXd SampleBatch::as_matrix() const {
  if (samples.empty()) return {};
  Eigen::MatrixXd out(static_cast<Eigen::Index>(samples.front().size()),
                      static_cast<Eigen::Index>(samples.size()));
  for (std::size_t j = 0; j < samples.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = samples[j].values();
  return out;
}

void predictor_update(Eigen::MatrixXd& states, const Eigen::MatrixXd& scores, double sigma_cur,
                      double sigma_next, double churn, std::span<Rng> rngs) {
  if (!(sigma_cur > sigma_next) || !(sigma_next >= 0.0)) {
    throw ConfigError("predictor requires sigma_cur > sigma_next >= 0");
  }
  if (scores.rows() != states.rows() || scores.cols() != states.cols()) {
    throw DimensionError("predictor: score shape does not match states");
  }
  if (rngs.size() != static_cast<std::size_t>(states.cols())) {
    throw DimensionError("predictor: one generator per state column required");
  }
  const double dt = sigma_cur - sigma_next;
  states += (dt * sigma_cur * (1.0 + churn * sigma_cur)) * scores;
  if (churn > 0.0) {
    const double noise_scale = std::sqrt(2.0 * churn) * sigma_cur * std::sqrt(dt);
    Eigen::VectorXd z(states.rows());
    for (std::size_t j = 0; j < rngs.size(); ++j) {
      rngs[j].fill_normal(z);
      states.col(static_cast<Eigen::Index>(j)) += noise_scale * z;
    }
  }
}

void corrector_update(Eigen::MatrixXd& states, const ScoreFn& score, double sigma, double delta,
                      std::size_t steps, std::span<Rng> rngs) {
  if (rngs.size() != static_cast<std::size_t>(states.cols())) {
    throw DimensionError("corrector: one generator per state column required");
  }
  if (steps == 0) return;
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("corrector step must be positive");
  const double half = 0.5 * delta;
  const double noise_scale = std::sqrt(delta);
  Eigen::VectorXd z(states.rows());
  for (std::size_t m = 0; m < steps; ++m) {
    const Eigen::MatrixXd s = score(states, sigma);
    if (s.rows() != states.rows() || s.cols() != states.cols()) {
      throw DimensionError("corrector: score shape does not match states");
    }
    states += half * s;
    for (std::size_t j = 0; j < rngs.size(); ++j) {
      rngs[j].fill_normal(z);
      states.col(static_cast<Eigen::Index>(j)) += noise_scale * z;
    }
  }
}

StateVector predictor_step(const StateVector& x, double sigma_cur, double sigma_next,
                           const Eigen::VectorXd& score, double churn, Rng& rng) {
  if (score.size() != x.values().size()) throw DimensionError("predictor: score length mismatch");
  Eigen::MatrixXd states = x.values();
  Eigen::MatrixXd scores = score;
  predictor_update(states, scores, sigma_cur, sigma_next, churn, std::span<Rng>(&rng, 1));
  return StateVector(states.col(0), x.grid());
}

StateVector langevin_correct_with_step(const StateVector& x, double sigma, const ScoreFn& score,
                                       std::size_t steps, double delta, Rng& rng) {
  Eigen::MatrixXd states = x.values();
  corrector_update(states, score, sigma, delta, steps, std::span<Rng>(&rng, 1));
  return StateVector(states.col(0), x.grid());
}

StateVector langevin_correct(const StateVector& x, double sigma, const ScoreFn& score, std::size_t steps,
                             double snr, Rng& rng) {
  if (steps == 0) return x;
  return langevin_correct_with_step(x, sigma, score, steps, (snr * sigma) * (snr * sigma), rng);
}

SampleBatch run_annealed_sampler(const ScoreFn& score, std::size_t dimension,
                                 std::optional<GridShape> grid, const SamplerConfig& cfg,
                                 const PowerParams& power) {
  cfg.validate();
  if (dimension < 1) throw DimensionError("sampler dimension must be >= 1");
  const auto& sched = cfg.schedule;

  std::vector<double> steps(sched.size(), 0.0);
  if (cfg.corrector_steps > 0) {
    if (cfg.step_rule == CorrectorStepRule::kCalibrated) {
      steps = calibrate_steps(score, dimension, cfg);
    } else {
      for (std::size_t k = 1; k < sched.size(); ++k) {
        steps[k] = (cfg.corrector_snr * sched[k]) * (cfg.corrector_snr * sched[k]);
      }
    }
  }

  const std::size_t block_count = (cfg.num_chains + kChainBlock - 1) / kChainBlock;
  std::vector<BlockResult> blocks(block_count);
  auto work = [&](std::size_t b) {
    const std::size_t first = b * kChainBlock;
    const std::size_t count = std::min(kChainBlock, cfg.num_chains - first);
    blocks[b] = run_block(score, dimension, cfg, steps, first, count);
  };

  const std::size_t workers = std::clamp<std::size_t>(cfg.workers, 1, block_count);
  if (workers == 1) {
    for (std::size_t b = 0; b < block_count; ++b) work(b);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t b = next++; b < block_count; b = next++) work(b);
      });
    }
  }

  // Report the failure of the lowest-indexed chain, independent of scheduling.
  const BlockResult* failed = nullptr;
  for (const auto& blk : blocks) {
    if (blk.error && (failed == nullptr || blk.failed_chain < failed->failed_chain)) failed = &blk;
  }
  if (failed != nullptr) std::rethrow_exception(failed->error);

  SampleBatch batch;
  batch.power = power;
  batch.samples.reserve(cfg.num_chains);
  for (const auto& blk : blocks) {
    for (Eigen::Index j = 0; j < blk.states.cols(); ++j) batch.samples.emplace_back(blk.states.col(j), grid);
  }
  batch.diagnostics.resize(sched.size());
  for (std::size_t k = 0; k < sched.size(); ++k) {
    double norm_sum = 0.0;
    for (const auto& blk : blocks) norm_sum += blk.score_norm_sums[k];
    batch.diagnostics[k].sigma = sched[k];
    batch.diagnostics[k].corrector_step = cfg.corrector_steps > 0 ? steps[k] : 0.0;
    batch.diagnostics[k].mean_score_norm = norm_sum / static_cast<double>(cfg.num_chains);
  }
  return batch;
}

SampleBatch sample_power_posterior(const ScoreSource& source, const Observation& y,
                                   const PowerParams& power, const SamplerConfig& cfg) {
  ScoreFn mixed = [&source, &y, power](const Eigen::MatrixXd& states, double sigma) {
    const Eigen::MatrixXd s_post = source.annealed_scores(states, sigma, &y);
    const Eigen::MatrixXd s_prior = source.annealed_scores(states, sigma, nullptr);
    return mix_scores(s_post, s_prior, power);
  };
  return run_annealed_sampler(mixed, source.dimension(), source.grid(), cfg, power);
}

SampleBatch sample_prior_power(const ScoreSource& source, double alpha, const SamplerConfig& cfg) {
  if (!(alpha > 0.0)) throw ConfigError("prior power must be positive");
  const PowerParams power(0.0, alpha);
  ScoreFn prior = [&source, alpha](const Eigen::MatrixXd& states, double sigma) {
    return Eigen::MatrixXd(alpha * source.annealed_scores(states, sigma, nullptr));
  };
  return run_annealed_sampler(prior, source.dimension(), source.grid(), cfg, power);
}

}  // namespace powerpost
