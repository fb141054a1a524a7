#include "powerpost/forward.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <numbers>
#include <string>

#include "binary_io.hpp"
#include "powerpost/serialization.hpp"

namespace powerpost {

namespace {

constexpr int kDatasetFormatVersion = 1;

std::vector<double> gaussian_kernel(double width) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * width));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (width * width));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

void require_grid(const StateVector& x, const ToyWorldConfig& cfg) {
  if (!x.grid()) throw DimensionError("toy_image: state has no grid metadata");
  if (*x.grid() != cfg.grid()) throw DimensionError("toy_image: state grid does not match world config");
}

}  // namespace

void ToyWorldConfig::validate() const {
  if (height < 2 || width < 2) throw ConfigError("world grid must be at least 2x2");
  if (min_layers < 1 || max_layers < min_layers) throw ConfigError("invalid layer count range");
  if (!(velocity_max > velocity_min)) throw ConfigError("velocity range is degenerate");
  if (!(wavelet_width > 0.0) || !std::isfinite(wavelet_width)) throw ConfigError("wavelet_width must be positive");
  if (!(undulation >= 0.0)) throw ConfigError("undulation must be >= 0");
  if (std::isnan(snr_db)) throw ConfigError("snr_db is NaN");
}

StateVector generate_layered_sample(const ToyWorldConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t span = cfg.max_layers - cfg.min_layers + 1;
  const std::size_t layers =
      cfg.min_layers + std::min(span - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(span)));

  std::vector<double> velocities(layers);
  for (double& v : velocities) v = cfg.velocity_min + rng.uniform() * (cfg.velocity_max - cfg.velocity_min);
  std::sort(velocities.begin(), velocities.end());

  struct Boundary {
    double depth, amplitude, cycles, phase;
  };
  std::vector<Boundary> boundaries(layers - 1);
  const auto h = static_cast<double>(cfg.height);
  for (auto& b : boundaries) {
    b.depth = rng.uniform() * h;
    b.amplitude = rng.uniform() * cfg.undulation;
    b.cycles = 0.5 + 1.5 * rng.uniform();
    b.phase = 2.0 * std::numbers::pi * rng.uniform();
  }

  Eigen::VectorXd values(static_cast<Eigen::Index>(cfg.size()));
  const auto w = static_cast<double>(cfg.width);
  for (std::size_t c = 0; c < cfg.width; ++c) {
    for (std::size_t r = 0; r < cfg.height; ++r) {
      const double depth = static_cast<double>(r) + 0.5;
      std::size_t index = 0;
      for (const auto& b : boundaries) {
        const double wave = b.amplitude * std::sin(2.0 * std::numbers::pi * b.cycles * static_cast<double>(c) / w + b.phase);
        if (b.depth + wave < depth) ++index;
      }
      values[static_cast<Eigen::Index>(r * cfg.width + c)] = velocities[index];
    }
  }
  return StateVector(std::move(values), cfg.grid());
}

Eigen::VectorXd blur_field(const Eigen::VectorXd& field, const ToyWorldConfig& cfg) {
  if (static_cast<std::size_t>(field.size()) != cfg.size()) throw DimensionError("blur: field size mismatch");
  const auto kernel = gaussian_kernel(cfg.wavelet_width);
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const auto rows = static_cast<std::ptrdiff_t>(cfg.height);
  const auto cols = static_cast<std::ptrdiff_t>(cfg.width);

  Eigen::VectorXd vertical = Eigen::VectorXd::Zero(field.size());
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    for (std::ptrdiff_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        const std::ptrdiff_t rr = r + k;
        if (rr < 0 || rr >= rows) continue;
        acc += kernel[static_cast<std::size_t>(k + radius)] * field[rr * cols + c];
      }
      vertical[r * cols + c] = acc;
    }
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(field.size());
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    for (std::ptrdiff_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        const std::ptrdiff_t cc = c + k;
        if (cc < 0 || cc >= cols) continue;
        acc += kernel[static_cast<std::size_t>(k + radius)] * vertical[r * cols + cc];
      }
      out[r * cols + c] = acc;
    }
  }
  return out;
}

namespace {

Eigen::VectorXd vertical_derivative(const Eigen::VectorXd& field, const ToyWorldConfig& cfg) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(field.size());
  const auto cols = static_cast<Eigen::Index>(cfg.width);
  for (Eigen::Index r = 0; r + 1 < static_cast<Eigen::Index>(cfg.height); ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) out[r * cols + c] = field[(r + 1) * cols + c] - field[r * cols + c];
  }
  return out;
}

}  // namespace

Observation toy_image(const StateVector& x, const ToyWorldConfig& cfg) {
  cfg.validate();
  require_grid(x, cfg);
  return Observation(blur_field(vertical_derivative(x.values(), cfg), cfg));
}

Eigen::MatrixXd imaging_matrix(const ToyWorldConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(cfg.size());
  Eigen::MatrixXd a(d, d);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    e[j] = 1.0;
    a.col(j) = blur_field(vertical_derivative(e, cfg), cfg);
    e[j] = 0.0;
  }
  return a;
}

Observation add_colored_noise(const Observation& y, double snr_db, const ToyWorldConfig& cfg, Rng& rng) {
  if (snr_db == kNoNoise) return y;
  if (!std::isfinite(snr_db)) throw DomainError("snr_db must be finite or +inf");
  const double signal = y.values().norm();
  if (!(signal > 0.0)) throw DomainError("SNR is undefined for a zero signal");
  const Eigen::VectorXd white = rng.normal_vector(y.size());
  Eigen::VectorXd noise = blur_field(white, cfg);
  const double raw = noise.norm();
  if (!(raw > 0.0)) throw DomainError("colored noise draw vanished");
  noise *= signal * std::pow(10.0, -snr_db / 20.0) / raw;
  return Observation(y.values() + noise);
}

double shot_residual(const StateVector& x_candidate, const Observation& y_obs, const ToyWorldConfig& cfg) {
  const Observation image = toy_image(x_candidate, cfg);
  if (image.size() != y_obs.size()) throw DimensionError("shot_residual: observation size mismatch");
  return (image.values() - y_obs.values()).norm();
}

std::vector<DataPair> generate_dataset(const ToyWorldConfig& cfg, std::size_t count, std::uint64_t seed) {
  cfg.validate();
  std::vector<DataPair> pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_stream(seed, i));
    StateVector x = generate_layered_sample(cfg, rng);
    Observation clean = toy_image(x, cfg);
    // A single-layer field images to zero; keep it noiseless rather than failing.
    Observation y = clean.values().norm() > 0.0 ? add_colored_noise(clean, cfg.snr_db, cfg, rng) : clean;
    pairs.push_back({std::move(x), std::move(y)});
  }
  return pairs;
}

void write_dataset(const std::filesystem::path& dir, const ToyWorldConfig& cfg, std::uint64_t seed,
                   const std::vector<DataPair>& pairs) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {
      {"format_version", kDatasetFormatVersion},
      {"kind", "toy-layered-dataset"},
      {"seed", seed},
      {"count", pairs.size()},
      {"world", cfg},
      {"state_dim", cfg.size()},
      {"obs_dim", cfg.size()},
      {"data_file", "pairs.f32"},
      {"encoding", "float32-le, x then y per pair"},
  };
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");

  std::string bytes;
  {
    std::ostringstream out(std::ios::binary);
    for (const auto& p : pairs) {
      for (Eigen::Index i = 0; i < p.x.values().size(); ++i) detail::put_f32(out, static_cast<float>(p.x.values()[i]));
      for (Eigen::Index i = 0; i < p.y.values().size(); ++i) detail::put_f32(out, static_cast<float>(p.y.values()[i]));
    }
    bytes = std::move(out).str();
  }
  write_text_atomic(dir / "pairs.f32", bytes);
}

LoadedDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw FormatError("cannot open dataset manifest " + (dir / "manifest.json").string(), 0);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("dataset manifest is not valid JSON: ") + e.what(), e.byte);
  }
  if (manifest.value("format_version", 0) != kDatasetFormatVersion) {
    throw FormatError("unsupported dataset format version", 0);
  }
  LoadedDataset out;
  out.world = manifest.at("world").get<ToyWorldConfig>();
  out.seed = manifest.at("seed").get<std::uint64_t>();
  const auto count = manifest.at("count").get<std::size_t>();
  const auto d = manifest.at("state_dim").get<std::size_t>();
  const auto m = manifest.at("obs_dim").get<std::size_t>();
  if (d != out.world.size()) throw FormatError("state_dim does not match world grid", 0);

  const std::string bytes = read_binary_file(dir / manifest.at("data_file").get<std::string>());
  const std::size_t record = 4 * (d + m);
  if (bytes.size() != record * count) {
    throw FormatError("dataset payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(record * count),
                      std::min(bytes.size(), record * count));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  out.pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(d));
    Eigen::VectorXd y(static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < d; ++k, p += 4) x[static_cast<Eigen::Index>(k)] = detail::get_f32(p);
    for (std::size_t k = 0; k < m; ++k, p += 4) y[static_cast<Eigen::Index>(k)] = detail::get_f32(p);
    out.pairs.push_back({StateVector(std::move(x), out.world.grid()), Observation(std::move(y))});
  }
  return out;
}

}  // namespace powerpost
