#pragma once

// Small fully connected denoiser D(x + n, y; sigma) trained with the conditional
// denoising objective and classifier-free-guidance dropout of the condition.
//
// Network input is [x_noisy ; condition ; log(sigma)] in normalized units, hidden
// layers use tanh, and the output layer is linear (no c_skip/c_out preconditioning).
// A dropped condition is replaced by standard Gaussian noise, never by zeros.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "powerpost/core.hpp"

namespace powerpost {

/// Affine maps between data units and the network's normalized units.
struct Normalization {
  double x_mean = 0.0;
  double x_scale = 1.0;
  double y_mean = 0.0;
  double y_scale = 1.0;
};

struct DenoiserParams {
  std::size_t state_dim = 0;
  std::size_t cond_dim = 0;
  std::vector<Eigen::MatrixXd> weights;  // layer l: out x in
  std::vector<Eigen::VectorXd> biases;
  Normalization norm;
  std::optional<GridShape> grid;

  /// [input, hidden..., output] where input = state_dim + cond_dim + 1.
  std::vector<std::size_t> layer_sizes() const;
  std::size_t parameter_count() const;
  /// Weights (row-major) then bias, layer by layer.
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  void validate() const;
};

/// Parameter-shaped gradient.
struct DenoiserGradient {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  Eigen::VectorXd flatten() const;
};

struct TrainConfig {
  double p_mean = -1.2;
  double p_std = 1.2;
  double cfg_drop_prob = 0.2;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double final_lr_fraction = 0.01;  // cosine decay from learning_rate to learning_rate * final_lr_fraction
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden_layers{128, 128};

  void validate() const;
};

/// LeCun-normal weights, zero biases, identity normalization.
DenoiserParams init_denoiser(std::size_t state_dim, std::size_t cond_dim,
                             const std::vector<std::size_t>& hidden_layers, std::uint64_t seed);

/// Raw network on normalized inputs; `inputs` is (state_dim + cond_dim + 1) x n.
Eigen::MatrixXd network_forward(const DenoiserParams& params, const Eigen::MatrixXd& inputs);

/// D(x_noisy, y; sigma) in data units. Without a condition, the condition channel is
/// filled with fresh standard normal noise drawn from `rng`.
StateVector denoise(const DenoiserParams& params, const StateVector& x_noisy, const Observation* cond,
                    double sigma, Rng& rng);

/// Same, with an explicit (normalized) condition channel.
StateVector denoise_with_channel(const DenoiserParams& params, const StateVector& x_noisy,
                                 const Eigen::VectorXd& cond_channel, double sigma);

struct EdmLossResult {
  double loss = 0.0;  // mean over the batch of |D - x|^2 in normalized units
  DenoiserGradient gradient;
  std::size_t dropped = 0;  // number of elements whose condition was replaced
};

/// Per element: sigma ~ LogNormal(p_mean, p_std^2), n ~ N(0, sigma^2 I), condition dropped with
/// probability cfg_drop_prob. Generator draw order per element: log-sigma normal, d noise
/// normals, one uniform, then m null-token normals if dropped.
EdmLossResult edm_loss(const DenoiserParams& params, std::span<const DataPair> batch,
                       const TrainConfig& cfg, Rng& rng);

struct TrainResult {
  DenoiserParams params;
  std::vector<double> loss_history;
};

/// Minibatch SGD with momentum. Data are normalized by their pooled mean and standard deviation,
/// which are stored in the returned parameters.
TrainResult train(std::span<const DataPair> dataset, const TrainConfig& cfg);

/// (denoise(x, cond, sigma) - x) / sigma^2.
Eigen::VectorXd score_from_denoiser(const DenoiserParams& params, const StateVector& x,
                                    const Observation* cond, double sigma, Rng& rng);

/// ScoreSource over a trained denoiser. The unconditional branch uses one fixed null token
/// drawn from `null_token_seed`, so queries are deterministic.
class DenoiserScoreSource final : public ScoreSource {
 public:
  DenoiserScoreSource(DenoiserParams params, std::uint64_t null_token_seed);

  std::size_t dimension() const override { return params_.state_dim; }
  std::optional<GridShape> grid() const override { return params_.grid; }
  Eigen::MatrixXd annealed_scores(const Eigen::MatrixXd& states, double sigma,
                                  const Observation* condition) const override;

  const DenoiserParams& params() const noexcept { return params_; }
  const Eigen::VectorXd& null_token() const noexcept { return null_token_; }

 private:
  DenoiserParams params_;
  Eigen::VectorXd null_token_;
};

struct Checkpoint {
  DenoiserParams params;
  TrainConfig train;
};

/// Layout: 8-byte magic "PPDNCKPT", u64 LE header length, JSON header, then the flattened
/// parameters as little-endian float64.
void save_checkpoint(const std::filesystem::path& path, const DenoiserParams& params,
                     const TrainConfig& train);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace powerpost
