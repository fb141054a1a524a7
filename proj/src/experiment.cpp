#include "powerpost/experiment.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "binary_io.hpp"
#include "powerpost/serialization.hpp"
#include "powerpost/verification.hpp"

namespace powerpost {

namespace {

using nlohmann::json;

constexpr std::uint64_t kPriorFitStreamTag = 0x6669740000000000ULL;
constexpr std::uint64_t kHeldOutStreamTag = 0x686f6c6400000000ULL;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string label(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

// Calls fn(i) for i in [0, count) on up to `workers` threads. The exception from the
// lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto body = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, count));
  if (n == 1) {
    body();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(body);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

json experiment_to_json(const ExperimentSettings& e) {
  return {{"score_source", e.score_source},
          {"samples_per_cell", e.samples_per_cell},
          {"alphas", e.alphas},
          {"lambdas", e.lambdas},
          {"lambda", e.lambda},
          {"alpha", e.alpha},
          {"observation_seed", e.observation_seed},
          {"fit_samples", e.fit_samples},
          {"prior_jitter", e.prior_jitter},
          {"dataset_size", e.dataset_size},
          {"verify_chains", e.verify_chains},
          {"tol_mean", e.tol_mean},
          {"tol_cov", e.tol_cov},
          {"tol_grad", e.tol_grad},
          {"tol_dropout", e.tol_dropout}};
}

void experiment_from_json(const json& j, ExperimentSettings& e) {
  check_keys(j, "experiment",
             {"score_source", "samples_per_cell", "alphas", "lambdas", "lambda", "alpha", "observation_seed",
              "fit_samples", "prior_jitter", "dataset_size", "verify_chains", "tol_mean", "tol_cov", "tol_grad",
              "tol_dropout"});
  read_key(j, "score_source", e.score_source);
  read_key(j, "samples_per_cell", e.samples_per_cell);
  read_key(j, "alphas", e.alphas);
  read_key(j, "lambdas", e.lambdas);
  read_key(j, "lambda", e.lambda);
  read_key(j, "alpha", e.alpha);
  read_key(j, "observation_seed", e.observation_seed);
  read_key(j, "fit_samples", e.fit_samples);
  read_key(j, "prior_jitter", e.prior_jitter);
  read_key(j, "dataset_size", e.dataset_size);
  read_key(j, "verify_chains", e.verify_chains);
  read_key(j, "tol_mean", e.tol_mean);
  read_key(j, "tol_cov", e.tol_cov);
  read_key(j, "tol_grad", e.tol_grad);
  read_key(j, "tol_dropout", e.tol_dropout);
}

constexpr std::array<std::string_view, 4> kScheduleKeys = {"sigma_min", "sigma_max", "num_steps", "rho"};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::optional<std::filesystem::path> denoiser_path(const std::string& source) {
  if (source == "analytic") return std::nullopt;
  constexpr std::string_view prefix = "denoiser:";
  if (source.rfind(prefix, 0) == 0 && source.size() > prefix.size()) return source.substr(prefix.size());
  throw ConfigError("score source must be 'analytic' or 'denoiser:<checkpoint>', got '" + source + "'");
}

struct ScoreSetup {
  std::unique_ptr<ScoreSource> source;
  std::optional<AnalyticWorld> analytic;
  DataPair observed;
};

ScoreSetup make_score_setup(const RunConfig& cfg) {
  DataPair observed = held_out_observation(cfg.world, cfg.experiment.observation_seed);
  if (auto path = denoiser_path(cfg.experiment.score_source)) {
    Checkpoint ck = load_checkpoint(*path);
    if (ck.params.grid && *ck.params.grid != cfg.world.grid()) {
      throw ConfigError("checkpoint grid does not match the world grid");
    }
    if (ck.params.state_dim != cfg.world.size() || ck.params.cond_dim != observed.y.size()) {
      throw ConfigError("checkpoint dimensions do not match the world");
    }
    ck.params.grid = cfg.world.grid();
    auto source = std::make_unique<DenoiserScoreSource>(std::move(ck.params), cfg.sampler.seed);
    return {std::move(source), std::nullopt, std::move(observed)};
  }
  AnalyticWorld world =
      fit_analytic_world(cfg.world, cfg.experiment.fit_samples, cfg.experiment.prior_jitter, cfg.train.seed);
  auto source = std::make_unique<GaussianPosteriorSource>(world.model, observed.y, cfg.world.grid());
  return {std::move(source), std::move(world), std::move(observed)};
}

struct Cell {
  double lambda = 1.0;
  double alpha = 1.0;
  bool prior_only = false;
  std::string name;
};

struct CellOutcome {
  CellStats stats;
  double residual_of_mean = 0.0;
  double mean_residual = 0.0;
  double median_residual = 0.0;
  double closed_form_residual = std::nan("");
  std::vector<std::string> files;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<CellOutcome> run_cells(const std::vector<Cell>& cells, const RunConfig& cfg, const ScoreSetup& setup,
                                   const std::filesystem::path& out) {
  std::vector<CellOutcome> outcomes(cells.size());
  const GridShape grid = cfg.world.grid();
  const std::size_t inner_workers = cells.size() == 1 ? cfg.sampler.workers : 1;
  parallel_for(cells.size(), cfg.sampler.workers, [&](std::size_t i) {
    const Cell& cell = cells[i];
    SamplerConfig sc = cfg.sampler;
    sc.num_chains = cfg.experiment.samples_per_cell;
    sc.workers = inner_workers;
    const SampleBatch batch = cell.prior_only
                                  ? sample_prior_power(*setup.source, cell.alpha, sc)
                                  : sample_power_posterior(*setup.source, setup.observed.y,
                                                           PowerParams(cell.lambda, cell.alpha), sc);
    CellOutcome& oc = outcomes[i];
    std::vector<double> residuals;
    for (std::size_t k = 0; k < batch.samples.size(); ++k) {
      char stem[32];
      std::snprintf(stem, sizeof(stem), "sample_%03zu", k);
      const auto rel = std::filesystem::path("cells") / cell.name / stem;
      json sidecar = {{"lambda", cell.lambda},
                      {"alpha", cell.alpha},
                      {"prior_only", cell.prior_only},
                      {"sample_index", k},
                      {"seed", sc.seed},
                      {"score_source", cfg.experiment.score_source}};
      write_grid(out / rel, batch.samples[k], sidecar);
      oc.files.push_back(rel.string() + ".f32");
      oc.files.push_back(rel.string() + ".json");
      residuals.push_back(shot_residual(batch.samples[k], setup.observed.y, cfg.world));
    }
    const Eigen::MatrixXd x = batch.as_matrix();
    oc.stats = cell_statistics(x, grid);
    oc.residual_of_mean = shot_residual(StateVector(x.rowwise().mean(), grid), setup.observed.y, cfg.world);
    double sum = 0.0;
    for (double r : residuals) sum += r;
    oc.mean_residual = sum / static_cast<double>(residuals.size());
    oc.median_residual = median(residuals);
    if (setup.analytic && !cell.prior_only) {
      const GaussianDensity exact = power_posterior_closed_form(setup.analytic->model, setup.observed.y,
                                                                PowerParams(cell.lambda, cell.alpha));
      oc.closed_form_residual = shot_residual(StateVector(exact.mean(), grid), setup.observed.y, cfg.world);
    }
  });
  return outcomes;
}

const char* kResidualHeader = "lambda,alpha,residual_of_mean,mean_residual,median_residual,closed_form_residual,spread\n";

std::string residual_row(const Cell& c, const CellOutcome& o) {
  return label(c.lambda) + "," + label(c.alpha) + "," + num(o.residual_of_mean) + "," + num(o.mean_residual) + "," +
         num(o.median_residual) + "," + num(o.closed_form_residual) + "," + num(std::sqrt(o.stats.variance)) + "\n";
}

void append(std::vector<std::string>& dst, const std::vector<std::string>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

void write_observation(const ScoreSetup& setup, const RunConfig& cfg, const std::filesystem::path& out,
                       RunResult& result) {
  const json meta = {{"observation_seed", cfg.experiment.observation_seed}};
  write_grid(out / "observation" / "x_true", setup.observed.x, meta);
  write_grid(out / "observation" / "y_obs", StateVector(setup.observed.y.values(), cfg.world.grid()), meta);
  for (const char* f : {"observation/x_true.f32", "observation/x_true.json", "observation/y_obs.f32",
                        "observation/y_obs.json"}) {
    result.outputs.emplace_back(f);
  }
}

RunResult run_train(const RunConfig& cfg, const std::filesystem::path& out) {
  RunResult result;
  const std::vector<DataPair> data = generate_dataset(cfg.world, cfg.experiment.dataset_size, cfg.train.seed);
  const TrainResult trained = train(data, cfg.train);
  save_checkpoint(out / "checkpoint.ppdn", trained.params, cfg.train);
  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < trained.loss_history.size(); ++i) csv += std::to_string(i) + "," + num(trained.loss_history[i]) + "\n";
  write_text_atomic(out / "loss.csv", csv);
  result.outputs = {"checkpoint.ppdn", "loss.csv"};
  return result;
}

RunResult run_sample(const RunConfig& cfg, const std::filesystem::path& out) {
  RunResult result;
  const ScoreSetup setup = make_score_setup(cfg);
  write_observation(setup, cfg, out, result);
  const Cell cell{cfg.experiment.lambda, cfg.experiment.alpha, false,
                  "lambda_" + label(cfg.experiment.lambda) + "_alpha_" + label(cfg.experiment.alpha)};
  const auto outcomes = run_cells({cell}, cfg, setup, out);
  append(result.outputs, outcomes[0].files);
  write_text_atomic(out / "summary.csv", std::string(kResidualHeader) + residual_row(cell, outcomes[0]));
  result.outputs.emplace_back("summary.csv");
  return result;
}

RunResult run_sweep_prior(const RunConfig& cfg, const std::filesystem::path& out) {
  RunResult result;
  const ScoreSetup setup = make_score_setup(cfg);
  std::vector<Cell> cells;
  for (double a : cfg.experiment.alphas) cells.push_back({0.0, a, true, "alpha_" + label(a)});
  const auto outcomes = run_cells(cells, cfg, setup, out);
  std::string csv = "alpha,mean,variance,lateral_coherence\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    append(result.outputs, outcomes[i].files);
    const CellStats& s = outcomes[i].stats;
    csv += label(cells[i].alpha) + "," + num(s.mean) + "," + num(s.variance) + "," + num(s.lateral_coherence) + "\n";
  }
  write_text_atomic(out / "summary.csv", csv);
  result.outputs.emplace_back("summary.csv");
  return result;
}

RunResult run_sweep_likelihood(const RunConfig& cfg, const std::filesystem::path& out) {
  RunResult result;
  const ScoreSetup setup = make_score_setup(cfg);
  write_observation(setup, cfg, out, result);
  std::vector<Cell> cells;
  for (double l : cfg.experiment.lambdas) cells.push_back({l, cfg.experiment.alpha, false, "lambda_" + label(l)});
  const auto outcomes = run_cells(cells, cfg, setup, out);
  std::string csv = kResidualHeader;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    append(result.outputs, outcomes[i].files);
    csv += residual_row(cells[i], outcomes[i]);
  }
  write_text_atomic(out / "summary.csv", csv);
  result.outputs.emplace_back("summary.csv");
  return result;
}

RunResult run_compass(const RunConfig& cfg, const std::filesystem::path& out) {
  RunResult result;
  const ScoreSetup setup = make_score_setup(cfg);
  write_observation(setup, cfg, out, result);
  std::vector<Cell> cells;
  for (double l : cfg.experiment.lambdas) {
    for (double a : cfg.experiment.alphas) cells.push_back({l, a, false, "lambda_" + label(l) + "_alpha_" + label(a)});
  }
  const auto outcomes = run_cells(cells, cfg, setup, out);
  std::string csv = kResidualHeader;
  std::string layout = "lambda\\alpha";
  for (double a : cfg.experiment.alphas) layout += "," + label(a);
  layout += "\n";
  const std::size_t cols = cfg.experiment.alphas.size();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    append(result.outputs, outcomes[i].files);
    csv += residual_row(cells[i], outcomes[i]);
    if (i % cols == 0) layout += label(cells[i].lambda);
    layout += ",cells/" + cells[i].name;
    if (i % cols == cols - 1) layout += "\n";
  }
  write_text_atomic(out / "summary.csv", csv);
  write_text_atomic(out / "layout.csv", layout);
  result.outputs.emplace_back("summary.csv");
  result.outputs.emplace_back("layout.csv");
  return result;
}

RunResult run_verify(const RunConfig& cfg, const std::filesystem::path& out) {
  RunResult result;
  if (auto path = denoiser_path(cfg.experiment.score_source)) load_checkpoint(*path);
  VerifySettings vs;
  vs.chains = cfg.experiment.verify_chains;
  vs.seed = cfg.sampler.seed;
  vs.workers = cfg.sampler.workers;
  vs.tol_mean = cfg.experiment.tol_mean;
  vs.tol_cov = cfg.experiment.tol_cov;
  vs.tol_grad = cfg.experiment.tol_grad;
  vs.tol_dropout = cfg.experiment.tol_dropout;
  const json report = report_json(run_verification_suites(vs));
  write_text_atomic(out / "verify.json", report.dump(2) + "\n");
  result.outputs.emplace_back("verify.json");
  result.passed = report.at("passed").get<bool>();
  return result;
}

}  // namespace

std::string_view kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kTrain: return "train";
    case ExperimentKind::kSample: return "sample";
    case ExperimentKind::kSweepPrior: return "sweep-prior";
    case ExperimentKind::kSweepLikelihood: return "sweep-likelihood";
    case ExperimentKind::kCompass: return "compass";
    case ExperimentKind::kVerify: return "verify";
  }
  return "unknown";
}

std::optional<ExperimentKind> parse_kind(std::string_view name) {
  for (auto k : {ExperimentKind::kTrain, ExperimentKind::kSample, ExperimentKind::kSweepPrior,
                 ExperimentKind::kSweepLikelihood, ExperimentKind::kCompass, ExperimentKind::kVerify}) {
    if (kind_name(k) == name) return k;
  }
  return std::nullopt;
}

json RunConfig::to_json() const {
  json sampler_json = sampler;
  json schedule = json::object();
  for (auto key : kScheduleKeys) {
    const std::string k(key);
    schedule[k] = sampler_json[k];
    sampler_json.erase(k);
  }
  return {{"world", world}, {"schedule", schedule}, {"sampler", sampler_json}, {"train", train},
          {"experiment", experiment_to_json(experiment)}};
}

void RunConfig::merge_json(const json& j) {
  const json& c = (j.contains("kind") && j.contains("config")) ? j.at("config") : j;
  check_keys(c, "config", {"world", "schedule", "sampler", "train", "experiment"});
  if (c.contains("world")) from_json(c["world"], world);
  json merged = c.value("sampler", json::object());
  check_keys(merged, "sampler",
             {"churn", "corrector_steps", "corrector_snr", "step_rule", "pilot_chains", "predictor", "num_chains",
              "seed", "workers"});
  if (c.contains("schedule")) {
    check_keys(c["schedule"], "schedule", {"sigma_min", "sigma_max", "num_steps", "rho"});
    merged.update(c["schedule"]);
  }
  from_json(merged, sampler);
  if (c.contains("train")) from_json(c["train"], train);
  if (c.contains("experiment")) experiment_from_json(c["experiment"], experiment);
}

void RunConfig::validate(ExperimentKind kind) const {
  world.validate();
  sampler.validate();
  train.validate();
  denoiser_path(experiment.score_source);
  for (double a : experiment.alphas) {
    if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("every alpha must be positive and finite");
  }
  for (double l : experiment.lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("every lambda must be >= 0 and finite");
  }
  if (kind == ExperimentKind::kSample) PowerParams(experiment.lambda, experiment.alpha);
  if (kind == ExperimentKind::kSweepLikelihood && !(experiment.alpha > 0.0)) {
    throw ConfigError("the likelihood sweep needs alpha > 0");
  }
  if (experiment.samples_per_cell < 1) throw ConfigError("samples_per_cell must be >= 1");
  if (experiment.fit_samples < 2) throw ConfigError("fit_samples must be >= 2");
  if (experiment.dataset_size < 1) throw ConfigError("dataset_size must be >= 1");
  if (experiment.verify_chains < 2) throw ConfigError("verify_chains must be >= 2");
  if (!(experiment.prior_jitter >= 0.0)) throw ConfigError("prior_jitter must be >= 0");
  for (double t : {experiment.tol_mean, experiment.tol_cov, experiment.tol_grad, experiment.tol_dropout}) {
    if (!(t >= 0.0)) throw ConfigError("tolerances must be >= 0");
  }
}

std::optional<ExperimentKind> load_config_file(const std::filesystem::path& path, RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  cfg.merge_json(j);
  if (j.contains("kind") && j.contains("config")) {
    auto kind = parse_kind(j["kind"].get<std::string>());
    if (!kind) throw ConfigError("manifest has an unknown experiment kind");
    return kind;
  }
  return std::nullopt;
}

std::vector<double> default_alphas(ExperimentKind kind) {
  if (kind == ExperimentKind::kSweepPrior) return {0.25, 0.5, 0.75, 1.0, 1.25, 1.5};
  if (kind == ExperimentKind::kCompass) return {0.5, 1.0, 2.0};
  return {};
}

std::vector<double> default_lambdas(ExperimentKind kind) {
  if (kind == ExperimentKind::kSweepLikelihood) return {0.0, 0.2, 0.4, 1.0, 2.0, 4.0, 8.0, 16.0};
  if (kind == ExperimentKind::kCompass) return {0.5, 1.0, 2.0};
  return {};
}

AnalyticWorld fit_analytic_world(const ToyWorldConfig& world, std::size_t fit_samples, double jitter,
                                 std::uint64_t seed) {
  world.validate();
  if (fit_samples < 2) throw ConfigError("fit_samples must be >= 2");
  const auto d = static_cast<Eigen::Index>(world.size());
  const std::uint64_t fit_seed = derive_stream(seed, kPriorFitStreamTag);
  Eigen::MatrixXd xs(d, static_cast<Eigen::Index>(fit_samples));
  for (std::size_t i = 0; i < fit_samples; ++i) {
    Rng rng(derive_stream(fit_seed, i));
    xs.col(static_cast<Eigen::Index>(i)) = generate_layered_sample(world, rng).values();
  }
  const Eigen::VectorXd mean = xs.rowwise().mean();
  const Eigen::MatrixXd centered = xs.colwise() - mean;
  Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(fit_samples - 1);
  const double avg_var = cov.diagonal().mean();
  cov.diagonal().array() += std::max(jitter * avg_var, 1e-12);
  cov = 0.5 * (cov + cov.transpose()).eval();

  Eigen::MatrixXd a = imaging_matrix(world);
  const double signal_power = (a * xs).colwise().squaredNorm().mean() / static_cast<double>(a.rows());
  const double noise_variance = std::isfinite(world.snr_db) ? signal_power * std::pow(10.0, -world.snr_db / 10.0)
                                                            : 1e-8 * std::max(signal_power, 1e-300);
  const auto m = a.rows();
  LinearGaussianModel model(std::move(a), noise_variance * Eigen::MatrixXd::Identity(m, m),
                            GaussianDensity(mean, cov));
  return {std::move(model), noise_variance};
}

DataPair held_out_observation(const ToyWorldConfig& world, std::uint64_t seed) {
  const std::uint64_t base = derive_stream(seed, kHeldOutStreamTag);
  for (std::uint64_t i = 0;; ++i) {
    Rng rng(derive_stream(base, i));
    StateVector x = generate_layered_sample(world, rng);
    Observation clean = toy_image(x, world);
    if (!(clean.values().norm() > 0.0)) continue;
    Observation y = add_colored_noise(clean, world.snr_db, world, rng);
    return {std::move(x), std::move(y)};
  }
}

CellStats cell_statistics(const Eigen::MatrixXd& samples, const GridShape& grid) {
  if (static_cast<std::size_t>(samples.rows()) != grid.size()) throw DimensionError("samples do not match grid");
  CellStats s;
  const auto k = samples.cols();
  s.mean = samples.mean();
  const Eigen::MatrixXd dev = samples.colwise() - samples.rowwise().mean();
  s.variance = k > 1 ? dev.squaredNorm() / (static_cast<double>(samples.rows()) * static_cast<double>(k - 1)) : 0.0;
  double cross = 0.0, left = 0.0, right = 0.0;
  const auto w = static_cast<Eigen::Index>(grid.width);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(grid.height); ++r) {
      for (Eigen::Index c = 0; c + 1 < w; ++c) {
        const double a = dev(r * w + c, j);
        const double b = dev(r * w + c + 1, j);
        cross += a * b;
        left += a * a;
        right += b * b;
      }
    }
  }
  s.lateral_coherence = left > 0.0 && right > 0.0 ? cross / std::sqrt(left * right) : 0.0;
  return s;
}

void write_grid(const std::filesystem::path& stem, const StateVector& sample, const json& sidecar) {
  std::ostringstream bytes(std::ios::binary);
  for (Eigen::Index i = 0; i < sample.values().size(); ++i) detail::put_f32(bytes, static_cast<float>(sample.values()[i]));
  json meta = sidecar;
  meta["dtype"] = "float32-le";
  meta["layout"] = "row-major";
  if (sample.grid()) {
    meta["height"] = sample.grid()->height;
    meta["width"] = sample.grid()->width;
  } else {
    meta["height"] = 1;
    meta["width"] = sample.size();
  }
  auto bin = stem;
  bin += ".f32";
  auto side = stem;
  side += ".json";
  write_text_atomic(bin, std::move(bytes).str());
  write_text_atomic(side, meta.dump(2) + "\n");
}

StateVector read_grid(const std::filesystem::path& stem) {
  auto side = stem;
  side += ".json";
  auto bin = stem;
  bin += ".f32";
  json meta;
  try {
    meta = json::parse(read_binary_file(side));
  } catch (const json::parse_error& e) {
    throw FormatError("grid sidecar is not valid JSON", e.byte);
  }
  const GridShape grid{meta.at("height").get<std::size_t>(), meta.at("width").get<std::size_t>()};
  const std::string bytes = read_binary_file(bin);
  if (bytes.size() != 4 * grid.size()) throw FormatError("grid payload has the wrong size", std::min(bytes.size(), 4 * grid.size()));
  Eigen::VectorXd v(static_cast<Eigen::Index>(grid.size()));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = detail::get_f32(p + 4 * i);
  return StateVector(std::move(v), grid);
}

RunResult run_experiment(ExperimentKind kind, const RunConfig& cfg, const std::filesystem::path& out) {
  RunConfig resolved = cfg;
  if (resolved.experiment.alphas.empty()) resolved.experiment.alphas = default_alphas(kind);
  if (resolved.experiment.lambdas.empty()) resolved.experiment.lambdas = default_lambdas(kind);
  resolved.validate(kind);

  std::filesystem::create_directories(out);
  json manifest = {{"kind", kind_name(kind)},
                   {"library_version", kLibraryVersion},
                   {"seed", resolved.sampler.seed},
                   {"config", resolved.to_json()},
                   {"outputs", json::array()},
                   {"status", "running"},
                   {"timing", {{"started_utc", utc_now()}}}};
  write_text_atomic(out / "manifest.json", manifest.dump(2) + "\n");

  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  switch (kind) {
    case ExperimentKind::kTrain: result = run_train(resolved, out); break;
    case ExperimentKind::kSample: result = run_sample(resolved, out); break;
    case ExperimentKind::kSweepPrior: result = run_sweep_prior(resolved, out); break;
    case ExperimentKind::kSweepLikelihood: result = run_sweep_likelihood(resolved, out); break;
    case ExperimentKind::kCompass: result = run_compass(resolved, out); break;
    case ExperimentKind::kVerify: result = run_verify(resolved, out); break;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  manifest["outputs"] = result.outputs;
  manifest["status"] = result.passed ? "complete" : "failed";
  manifest["timing"]["finished_utc"] = utc_now();
  manifest["timing"]["wall_seconds"] = seconds;
  write_text_atomic(out / "manifest.json", manifest.dump(2) + "\n");
  return result;
}

}  // namespace powerpost
