#include "powerpost/denoiser.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "binary_io.hpp"
#include "powerpost/serialization.hpp"

namespace powerpost {

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'P', 'D', 'N', 'C', 'K', 'P', 'T'};
constexpr int kCheckpointFormatVersion = 1;

void require_positive_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("denoiser requires sigma > 0");
}

Eigen::MatrixXd normalized_states(const Eigen::MatrixXd& states, const Normalization& n) {
  return (states.array() - n.x_mean) / n.x_scale;
}

Eigen::VectorXd normalized_condition(const Eigen::VectorXd& y, const Normalization& n) {
  return (y.array() - n.y_mean) / n.y_scale;
}

// [x ; condition ; log sigma] per column, all in normalized units.
Eigen::MatrixXd assemble_inputs(const Eigen::MatrixXd& x_norm, const Eigen::VectorXd& cond_channel,
                                double sigma_norm) {
  const Eigen::Index d = x_norm.rows();
  const Eigen::Index m = cond_channel.size();
  Eigen::MatrixXd inputs(d + m + 1, x_norm.cols());
  inputs.topRows(d) = x_norm;
  inputs.middleRows(d, m) = cond_channel.replicate(1, x_norm.cols());
  inputs.row(d + m).setConstant(std::log(sigma_norm));
  return inputs;
}

// Forward pass that keeps every layer's activation (activations[0] is the input).
Eigen::MatrixXd forward_with_cache(const DenoiserParams& p, const Eigen::MatrixXd& inputs,
                                   std::vector<Eigen::MatrixXd>* activations) {
  Eigen::MatrixXd a = inputs;
  const std::size_t layers = p.weights.size();
  if (activations) activations->assign(1, a);
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = p.weights[l] * a;
    z.colwise() += p.biases[l];
    if (l + 1 < layers) z = z.array().tanh().matrix();
    a = std::move(z);
    if (activations && l + 1 < layers) activations->push_back(a);
  }
  return a;
}

}  // namespace

std::vector<std::size_t> DenoiserParams::layer_sizes() const {
  std::vector<std::size_t> sizes;
  if (weights.empty()) return sizes;
  sizes.push_back(static_cast<std::size_t>(weights.front().cols()));
  for (const auto& w : weights) sizes.push_back(static_cast<std::size_t>(w.rows()));
  return sizes;
}

std::size_t DenoiserParams::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

namespace {

template <typename Weights, typename Biases>
Eigen::VectorXd flatten_layers(const Weights& weights, const Biases& biases) {
  std::size_t total = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) total += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  Eigen::VectorXd flat(static_cast<Eigen::Index>(total));
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) flat[k++] = weights[l](r, c);
    }
    for (Eigen::Index r = 0; r < biases[l].size(); ++r) flat[k++] = biases[l][r];
  }
  return flat;
}

}  // namespace

Eigen::VectorXd DenoiserParams::flatten() const { return flatten_layers(weights, biases); }
Eigen::VectorXd DenoiserGradient::flatten() const { return flatten_layers(weights, biases); }

void DenoiserParams::assign(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
    throw DimensionError("parameter vector has wrong length");
  }
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = flat[k++];
    }
    for (Eigen::Index r = 0; r < biases[l].size(); ++r) biases[l][r] = flat[k++];
  }
}

void DenoiserParams::validate() const {
  if (weights.empty() || weights.size() != biases.size()) throw DimensionError("denoiser has no layers");
  if (static_cast<std::size_t>(weights.front().cols()) != state_dim + cond_dim + 1) {
    throw DimensionError("first layer width does not match state_dim + cond_dim + 1");
  }
  if (static_cast<std::size_t>(weights.back().rows()) != state_dim) {
    throw DimensionError("output layer width does not match state_dim");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (biases[l].size() != weights[l].rows()) throw DimensionError("bias length does not match layer");
    if (l > 0 && weights[l].cols() != weights[l - 1].rows()) throw DimensionError("layer shapes are inconsistent");
    if (!weights[l].allFinite() || !biases[l].allFinite()) throw DomainError("denoiser parameters are not finite");
  }
  if (!(norm.x_scale > 0.0) || !(norm.y_scale > 0.0)) throw DomainError("normalization scales must be positive");
  if (grid && grid->size() != state_dim) throw DimensionError("grid does not match state_dim");
}

void TrainConfig::validate() const {
  if (!(cfg_drop_prob >= 0.0 && cfg_drop_prob <= 1.0)) throw ConfigError("cfg_drop_prob must lie in [0, 1]");
  if (!(p_std > 0.0) || !std::isfinite(p_mean)) throw ConfigError("p_std must be positive and p_mean finite");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) throw ConfigError("final_lr_fraction must lie in (0, 1]");
  for (auto h : hidden_layers) {
    if (h < 1) throw ConfigError("hidden layer widths must be >= 1");
  }
}

DenoiserParams init_denoiser(std::size_t state_dim, std::size_t cond_dim,
                             const std::vector<std::size_t>& hidden_layers, std::uint64_t seed) {
  if (state_dim < 1 || cond_dim < 1) throw DimensionError("denoiser dimensions must be >= 1");
  DenoiserParams p;
  p.state_dim = state_dim;
  p.cond_dim = cond_dim;
  std::vector<std::size_t> sizes{state_dim + cond_dim + 1};
  sizes.insert(sizes.end(), hidden_layers.begin(), hidden_layers.end());
  sizes.push_back(state_dim);
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes[l]);
    const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    Eigen::MatrixXd w(out, in);
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) w(r, c) = scale * rng.normal();
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(out));
  }
  return p;
}

Eigen::MatrixXd network_forward(const DenoiserParams& params, const Eigen::MatrixXd& inputs) {
  if (params.weights.empty() || inputs.rows() != params.weights.front().cols()) {
    throw DimensionError("network input has wrong width");
  }
  return forward_with_cache(params, inputs, nullptr);
}

StateVector denoise_with_channel(const DenoiserParams& params, const StateVector& x_noisy,
                                 const Eigen::VectorXd& cond_channel, double sigma) {
  require_positive_sigma(sigma);
  if (x_noisy.size() != params.state_dim) throw DimensionError("denoise: state has wrong length");
  if (static_cast<std::size_t>(cond_channel.size()) != params.cond_dim) {
    throw DimensionError("denoise: condition has wrong length");
  }
  const Eigen::MatrixXd x = x_noisy.values();
  const Eigen::MatrixXd inputs =
      assemble_inputs(normalized_states(x, params.norm), cond_channel, sigma / params.norm.x_scale);
  const Eigen::MatrixXd out = network_forward(params, inputs);
  Eigen::VectorXd d = (out.col(0).array() * params.norm.x_scale + params.norm.x_mean).matrix();
  return StateVector(std::move(d), x_noisy.grid());
}

StateVector denoise(const DenoiserParams& params, const StateVector& x_noisy, const Observation* cond,
                    double sigma, Rng& rng) {
  if (cond != nullptr) {
    if (cond->size() != params.cond_dim) throw DimensionError("denoise: condition has wrong length");
    return denoise_with_channel(params, x_noisy, normalized_condition(cond->values(), params.norm), sigma);
  }
  return denoise_with_channel(params, x_noisy, rng.normal_vector(params.cond_dim), sigma);
}

EdmLossResult edm_loss(const DenoiserParams& params, std::span<const DataPair> batch,
                       const TrainConfig& cfg, Rng& rng) {
  if (batch.empty()) throw ConfigError("edm_loss needs a non-empty batch");
  const auto d = static_cast<Eigen::Index>(params.state_dim);
  const auto m = static_cast<Eigen::Index>(params.cond_dim);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const Normalization& norm = params.norm;

  EdmLossResult result;
  Eigen::MatrixXd inputs(d + m + 1, n);
  Eigen::MatrixXd targets(d, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const DataPair& pair = batch[static_cast<std::size_t>(i)];
    if (pair.x.values().size() != d || pair.y.values().size() != m) {
      throw DimensionError("edm_loss: batch element has wrong dimensions");
    }
    targets.col(i) = (pair.x.values().array() - norm.x_mean) / norm.x_scale;
    const double sigma = std::exp(cfg.p_mean + cfg.p_std * rng.normal());
    inputs.col(i).head(d) = targets.col(i) + sigma * rng.normal_vector(params.state_dim);
    const bool drop = rng.uniform() < cfg.cfg_drop_prob;
    if (drop) {
      inputs.col(i).segment(d, m) = rng.normal_vector(params.cond_dim);
      ++result.dropped;
    } else {
      inputs.col(i).segment(d, m) = normalized_condition(pair.y.values(), norm);
    }
    inputs(d + m, i) = std::log(sigma);
  }

  std::vector<Eigen::MatrixXd> acts;
  const Eigen::MatrixXd out = forward_with_cache(params, inputs, &acts);
  const Eigen::MatrixXd residual = out - targets;
  result.loss = residual.squaredNorm() / static_cast<double>(n);

  const std::size_t layers = params.weights.size();
  result.gradient.weights.resize(layers);
  result.gradient.biases.resize(layers);
  Eigen::MatrixXd delta = (2.0 / static_cast<double>(n)) * residual;
  for (std::size_t l = layers; l-- > 0;) {
    result.gradient.weights[l] = delta * acts[l].transpose();
    result.gradient.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = (params.weights[l].transpose() * delta).cwiseProduct(
          (1.0 - acts[l].array().square()).matrix());
    }
  }
  return result;
}

namespace {

std::pair<double, double> pooled_moments(std::span<const DataPair> data, bool states) {
  double sum = 0.0, sq = 0.0, count = 0.0;
  for (const auto& p : data) {
    const Eigen::VectorXd& v = states ? p.x.values() : p.y.values();
    sum += v.sum();
    sq += v.squaredNorm();
    count += static_cast<double>(v.size());
  }
  const double mean = sum / count;
  const double var = std::max(0.0, sq / count - mean * mean);
  const double sd = std::sqrt(var);
  return {mean, sd > 1e-12 ? sd : 1.0};
}

}  // namespace

TrainResult train(std::span<const DataPair> dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  const std::size_t d = dataset.front().x.size();
  const std::size_t m = dataset.front().y.size();
  for (const auto& p : dataset) {
    if (p.x.size() != d || p.y.size() != m) throw DimensionError("training pairs differ in dimensions");
  }

  TrainResult result;
  result.params = init_denoiser(d, m, cfg.hidden_layers, derive_stream(cfg.seed, 0));
  auto [x_mean, x_scale] = pooled_moments(dataset, true);
  auto [y_mean, y_scale] = pooled_moments(dataset, false);
  result.params.norm = {x_mean, x_scale, y_mean, y_scale};
  result.params.grid = dataset.front().x.grid();
  result.loss_history.reserve(cfg.steps);

  DenoiserParams& params = result.params;
  std::vector<Eigen::MatrixXd> vel_w;
  std::vector<Eigen::VectorXd> vel_b;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    vel_w.push_back(Eigen::MatrixXd::Zero(params.weights[l].rows(), params.weights[l].cols()));
    vel_b.push_back(Eigen::VectorXd::Zero(params.biases[l].size()));
  }

  Rng rng(derive_stream(cfg.seed, 1));
  std::vector<DataPair> batch;
  batch.reserve(cfg.batch_size);
  const auto count = static_cast<double>(dataset.size());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    batch.clear();
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      const auto idx = std::min(dataset.size() - 1, static_cast<std::size_t>(rng.uniform() * count));
      batch.push_back(dataset[idx]);
    }
    const EdmLossResult res = edm_loss(params, batch, cfg, rng);
    if (!std::isfinite(res.loss)) throw TrainingDivergedError(step);
    result.loss_history.push_back(res.loss);
    const double progress = cfg.steps > 1 ? static_cast<double>(step) / static_cast<double>(cfg.steps - 1) : 0.0;
    const double lr = cfg.learning_rate *
                      (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
      vel_w[l] = cfg.momentum * vel_w[l] - lr * res.gradient.weights[l];
      vel_b[l] = cfg.momentum * vel_b[l] - lr * res.gradient.biases[l];
      params.weights[l] += vel_w[l];
      params.biases[l] += vel_b[l];
    }
  }
  return result;
}

Eigen::VectorXd score_from_denoiser(const DenoiserParams& params, const StateVector& x,
                                    const Observation* cond, double sigma, Rng& rng) {
  require_positive_sigma(sigma);
  const StateVector d = denoise(params, x, cond, sigma, rng);
  return (d.values() - x.values()) / (sigma * sigma);
}

DenoiserScoreSource::DenoiserScoreSource(DenoiserParams params, std::uint64_t null_token_seed)
    : params_(std::move(params)) {
  params_.validate();
  Rng rng(derive_stream(null_token_seed, kNullTokenStreamTag));
  null_token_ = rng.normal_vector(params_.cond_dim);
}

Eigen::MatrixXd DenoiserScoreSource::annealed_scores(const Eigen::MatrixXd& states, double sigma,
                                                     const Observation* condition) const {
  require_positive_sigma(sigma);
  if (static_cast<std::size_t>(states.rows()) != params_.state_dim) {
    throw DimensionError("denoiser source: states have wrong dimension");
  }
  Eigen::VectorXd channel;
  if (condition != nullptr) {
    if (condition->size() != params_.cond_dim) throw DimensionError("denoiser source: condition has wrong length");
    channel = normalized_condition(condition->values(), params_.norm);
  } else {
    channel = null_token_;
  }
  const Eigen::MatrixXd inputs =
      assemble_inputs(normalized_states(states, params_.norm), channel, sigma / params_.norm.x_scale);
  const Eigen::MatrixXd out = network_forward(params_, inputs);
  const Eigen::MatrixXd denoised = (out.array() * params_.norm.x_scale + params_.norm.x_mean).matrix();
  return (denoised - states) / (sigma * sigma);
}

void save_checkpoint(const std::filesystem::path& path, const DenoiserParams& params,
                     const TrainConfig& train_cfg) {
  params.validate();
  nlohmann::json header = {
      {"format_version", kCheckpointFormatVersion},
      {"layer_sizes", params.layer_sizes()},
      {"activation", "tanh"},
      {"input_features", {"state", "condition", "log_sigma"}},
      {"state_dim", params.state_dim},
      {"cond_dim", params.cond_dim},
      {"normalization",
       {{"x_mean", params.norm.x_mean},
        {"x_scale", params.norm.x_scale},
        {"y_mean", params.norm.y_mean},
        {"y_scale", params.norm.y_scale}}},
      {"grid", params.grid ? nlohmann::json{{"height", params.grid->height}, {"width", params.grid->width}}
                           : nlohmann::json(nullptr)},
      {"train_config", train_cfg},
      {"param_count", params.parameter_count()},
      {"param_order", "per layer: weights row-major (out x in), then bias"},
  };
  const std::string text = header.dump();
  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const Eigen::VectorXd flat = params.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) detail::put_f64(out, flat[i]);
  write_text_atomic(path, std::move(out).str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_binary_file(path);
  } catch (const std::runtime_error& e) {
    throw FormatError(e.what(), 0);
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError("not a denoiser checkpoint (bad magic)", 0);
  }
  const std::uint64_t header_len = detail::get_u64(raw + 8);
  if (header_len > bytes.size() - 16) throw FormatError("header length exceeds file size", 8);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what(), 16 + e.byte);
  }

  Checkpoint ck;
  std::vector<std::size_t> sizes;
  try {
    if (header.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw FormatError("unsupported checkpoint format version", 16);
    }
    sizes = header.at("layer_sizes").get<std::vector<std::size_t>>();
    ck.params.state_dim = header.at("state_dim").get<std::size_t>();
    ck.params.cond_dim = header.at("cond_dim").get<std::size_t>();
    const auto& nm = header.at("normalization");
    ck.params.norm = {nm.at("x_mean").get<double>(), nm.at("x_scale").get<double>(), nm.at("y_mean").get<double>(),
                      nm.at("y_scale").get<double>()};
    if (!header.at("grid").is_null()) {
      ck.params.grid = GridShape{header["grid"].at("height").get<std::size_t>(), header["grid"].at("width").get<std::size_t>()};
    }
    ck.train = header.at("train_config").get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is incomplete: ") + e.what(), 16);
  }
  if (sizes.size() < 2) throw FormatError("checkpoint needs at least two layer sizes", 16);

  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    ck.params.weights.push_back(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sizes[l + 1]),
                                                      static_cast<Eigen::Index>(sizes[l])));
    ck.params.biases.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sizes[l + 1])));
  }
  const std::uint64_t payload_at = 16 + header_len;
  const std::size_t count = ck.params.parameter_count();
  if (bytes.size() - payload_at != 8 * count) {
    throw FormatError("parameter payload has " + std::to_string(bytes.size() - payload_at) + " bytes, expected " +
                          std::to_string(8 * count),
                      payload_at + std::min<std::uint64_t>(bytes.size() - payload_at, 8 * count));
  }
  Eigen::VectorXd flat(static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    flat[static_cast<Eigen::Index>(i)] = detail::get_f64(raw + payload_at + 8 * i);
    if (!std::isfinite(flat[static_cast<Eigen::Index>(i)])) {
      throw FormatError("non-finite parameter " + std::to_string(i), payload_at + 8 * i);
    }
  }
  ck.params.assign(flat);
  try {
    ck.params.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("inconsistent checkpoint: ") + e.what(), 16);
  }
  return ck;
}

}  // namespace powerpost
