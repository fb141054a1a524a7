#pragma once

// Batch experiment driver behind the `powerpost` command line tool.
//
// A run is fully described by a RunConfig. Every run writes manifest.json before
// doing any work and rewrites it with timing on completion; passing that manifest
// back through --config reproduces every other output byte for byte.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "powerpost/analytic.hpp"
#include "powerpost/denoiser.hpp"
#include "powerpost/forward.hpp"
#include "powerpost/sampler.hpp"

namespace powerpost {

inline constexpr std::string_view kLibraryVersion = "0.1.0";

enum class ExperimentKind { kTrain, kSample, kSweepPrior, kSweepLikelihood, kCompass, kVerify };

std::string_view kind_name(ExperimentKind kind);
std::optional<ExperimentKind> parse_kind(std::string_view name);

struct ExperimentSettings {
  std::string score_source = "analytic";  // "analytic" or "denoiser:<checkpoint>"
  std::size_t samples_per_cell = 32;
  std::vector<double> alphas;   // empty selects the per-kind default grid
  std::vector<double> lambdas;
  double lambda = 1.0;          // `sample`
  double alpha = 1.0;
  std::uint64_t observation_seed = 1;
  std::size_t fit_samples = 2000;     // analytic prior fit
  double prior_jitter = 1e-3;         // relative to the mean prior variance
  std::size_t dataset_size = 4000;    // `train`
  std::size_t verify_chains = 10000;
  double tol_mean = 0.03;
  double tol_cov = 0.05;
  double tol_grad = 1e-4;
  double tol_dropout = 0.01;
};

struct RunConfig {
  ToyWorldConfig world;
  SamplerConfig sampler;
  TrainConfig train;
  ExperimentSettings experiment;

  /// {world, schedule, sampler, train, experiment}.
  nlohmann::json to_json() const;
  /// Applies `j` on top of the current values. Accepts a plain config or a run manifest.
  void merge_json(const nlohmann::json& j);
  void validate(ExperimentKind kind) const;
};

/// Reads a config or manifest file. Returns the manifest's kind when the file is a manifest.
std::optional<ExperimentKind> load_config_file(const std::filesystem::path& path, RunConfig& cfg);

std::vector<double> default_alphas(ExperimentKind kind);
std::vector<double> default_lambdas(ExperimentKind kind);

/// Conjugate stand-in for the toy world: a Gaussian prior fitted to generated fields,
/// the exact imaging matrix, and isotropic noise matching the configured SNR on average.
struct AnalyticWorld {
  LinearGaussianModel model;
  double noise_variance;
};

AnalyticWorld fit_analytic_world(const ToyWorldConfig& world, std::size_t fit_samples, double jitter,
                                 std::uint64_t seed);

/// Held-out field and its noisy image, drawn from streams of `seed` that training never uses.
DataPair held_out_observation(const ToyWorldConfig& world, std::uint64_t seed);

struct CellStats {
  double mean = 0.0;
  double variance = 0.0;           // mean over pixels of the across-sample variance
  double lateral_coherence = 0.0;  // lag-1 lateral correlation of deviations from the cell mean
};

CellStats cell_statistics(const Eigen::MatrixXd& samples, const GridShape& grid);

struct RunResult {
  bool passed = true;
  std::vector<std::string> outputs;  // relative to the output directory
};

/// Runs one experiment into `out`. Throws ConfigError for invalid settings before writing anything.
RunResult run_experiment(ExperimentKind kind, const RunConfig& cfg, const std::filesystem::path& out);

/// Raw float32 grid plus JSON sidecar, both written atomically.
void write_grid(const std::filesystem::path& stem, const StateVector& sample, const nlohmann::json& sidecar);
StateVector read_grid(const std::filesystem::path& stem);

}  // namespace powerpost
