#pragma once

// Toy data pipeline: procedural layered velocity fields, a linear migration-image
// stand-in (vertical derivative then Gaussian blur), band-limited noise and the
// image-space residual metric.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "powerpost/core.hpp"

namespace powerpost {

struct ToyWorldConfig {
  std::size_t height = 16;
  std::size_t width = 32;
  std::size_t min_layers = 2;
  std::size_t max_layers = 6;
  double velocity_min = 1.5;
  double velocity_max = 4.5;
  double wavelet_width = 1.0;  // blur standard deviation, in grid cells
  double snr_db = 10.0;        // +inf disables noise
  double undulation = 1.5;     // peak lateral displacement of layer boundaries, in rows

  GridShape grid() const noexcept { return {height, width}; }
  std::size_t size() const noexcept { return height * width; }
  void validate() const;
};

inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

StateVector generate_layered_sample(const ToyWorldConfig& cfg, Rng& rng);

/// y = G_blur * D_z * x. Requires grid metadata matching cfg.
Observation toy_image(const StateVector& x, const ToyWorldConfig& cfg);

/// Dense m x d matrix of toy_image (m = d = height * width).
Eigen::MatrixXd imaging_matrix(const ToyWorldConfig& cfg);

/// Separable Gaussian blur (zero padding) on a row-major grid.
Eigen::VectorXd blur_field(const Eigen::VectorXd& field, const ToyWorldConfig& cfg);

/// Adds blurred Gaussian noise scaled so that 10 log10(|y|^2 / |n|^2) = snr_db for the realized draw.
Observation add_colored_noise(const Observation& y, double snr_db, const ToyWorldConfig& cfg, Rng& rng);

/// |toy_image(x) - y_obs|_2.
double shot_residual(const StateVector& x_candidate, const Observation& y_obs, const ToyWorldConfig& cfg);

/// Pair i uses the generator seeded with derive_stream(seed, i).
std::vector<DataPair> generate_dataset(const ToyWorldConfig& cfg, std::size_t count, std::uint64_t seed);

/// Writes `dir/manifest.json` and `dir/pairs.f32` (little-endian float32, x then y per pair).
void write_dataset(const std::filesystem::path& dir, const ToyWorldConfig& cfg, std::uint64_t seed,
                   const std::vector<DataPair>& pairs);

struct LoadedDataset {
  ToyWorldConfig world;
  std::uint64_t seed = 0;
  std::vector<DataPair> pairs;
};

LoadedDataset read_dataset(const std::filesystem::path& dir);

}  // namespace powerpost
