// powerpost: batch experiments for power-scaled posterior sampling.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or config error, 3 numerical divergence.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "powerpost/experiment.hpp"

namespace pp = powerpost;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "powerpost-out";
  std::optional<std::size_t> workers;
  std::optional<std::string> score_source;
  std::optional<std::size_t> height, width;
  std::optional<double> snr_db;
  std::optional<std::size_t> num_steps, corrector_steps, samples;
  std::optional<double> lambda, alpha;
  std::vector<double> alphas, lambdas;
  std::optional<std::size_t> train_steps, dataset_size, chains;
  std::optional<double> learning_rate, tol_mean, tol_cov, tol_grad, tol_dropout;
};

template <typename T, typename U>
void apply(const std::optional<T>& flag, U& target) {
  if (flag) target = *flag;
}

pp::RunConfig resolve(pp::ExperimentKind kind, const Flags& f) {
  pp::RunConfig cfg;
  if (!f.config.empty()) {
    auto manifest_kind = pp::load_config_file(f.config, cfg);
    if (manifest_kind && *manifest_kind != kind) {
      throw pp::ConfigError("manifest was written by '" + std::string(pp::kind_name(*manifest_kind)) +
                            "', not '" + std::string(pp::kind_name(kind)) + "'");
    }
  }
  if (f.seed) {
    cfg.sampler.seed = *f.seed;
    cfg.train.seed = *f.seed;
  }
  apply(f.workers, cfg.sampler.workers);
  apply(f.score_source, cfg.experiment.score_source);
  apply(f.height, cfg.world.height);
  apply(f.width, cfg.world.width);
  apply(f.snr_db, cfg.world.snr_db);
  if (f.num_steps) {
    cfg.sampler.schedule = pp::build_schedule(cfg.sampler.schedule.sigma_min(), cfg.sampler.schedule.sigma_max(),
                                              *f.num_steps, cfg.sampler.schedule.rho());
  }
  apply(f.corrector_steps, cfg.sampler.corrector_steps);
  apply(f.samples, cfg.experiment.samples_per_cell);
  apply(f.lambda, cfg.experiment.lambda);
  apply(f.alpha, cfg.experiment.alpha);
  if (!f.alphas.empty()) cfg.experiment.alphas = f.alphas;
  if (!f.lambdas.empty()) cfg.experiment.lambdas = f.lambdas;
  apply(f.train_steps, cfg.train.steps);
  apply(f.dataset_size, cfg.experiment.dataset_size);
  apply(f.learning_rate, cfg.train.learning_rate);
  apply(f.chains, cfg.experiment.verify_chains);
  apply(f.tol_mean, cfg.experiment.tol_mean);
  apply(f.tol_cov, cfg.experiment.tol_cov);
  apply(f.tol_grad, cfg.experiment.tol_grad);
  apply(f.tol_dropout, cfg.experiment.tol_dropout);

  constexpr std::string_view prefix = "denoiser:";
  auto& source = cfg.experiment.score_source;
  if (source.rfind(prefix, 0) == 0 && source.size() > prefix.size()) {
    source = std::string(prefix) + std::filesystem::absolute(source.substr(prefix.size())).lexically_normal().string();
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Power-scaled posterior sampling experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "JSON config or a previous run's manifest.json");
  app.add_option("--seed", f.seed, "Master seed for sampling and training");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--workers", f.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--score-source", f.score_source, "analytic | denoiser:<checkpoint>");
  app.add_option("--height", f.height, "World grid height");
  app.add_option("--width", f.width, "World grid width");
  app.add_option("--snr-db", f.snr_db, "Observation SNR in dB");
  app.add_option("--num-steps", f.num_steps, "Noise levels in the schedule");
  app.add_option("--corrector-steps", f.corrector_steps, "Langevin steps per level");

  auto* train = app.add_subcommand("train", "Train the conditional denoiser on generated toy data");
  train->add_option("--steps", f.train_steps, "Optimizer steps");
  train->add_option("--dataset-size", f.dataset_size, "Number of generated training pairs");
  train->add_option("--learning-rate", f.learning_rate, "SGD learning rate");

  auto* sample = app.add_subcommand("sample", "Draw power-posterior samples for one (lambda, alpha)");
  sample->add_option("--lambda", f.lambda, "Likelihood power");
  sample->add_option("--alpha", f.alpha, "Prior power");
  sample->add_option("--samples", f.samples, "Samples per cell");

  auto* prior = app.add_subcommand("sweep-prior", "Prior power sweep");
  prior->add_option("--alphas", f.alphas, "Prior powers")->delimiter(',');
  prior->add_option("--samples", f.samples, "Samples per cell");

  auto* likelihood = app.add_subcommand("sweep-likelihood", "Likelihood power sweep with residuals");
  likelihood->add_option("--lambdas", f.lambdas, "Likelihood powers")->delimiter(',');
  likelihood->add_option("--alpha", f.alpha, "Fixed prior power");
  likelihood->add_option("--samples", f.samples, "Samples per cell");

  auto* compass = app.add_subcommand("compass", "Joint (alpha, lambda) grid");
  compass->add_option("--alphas", f.alphas, "Prior powers (columns)")->delimiter(',');
  compass->add_option("--lambdas", f.lambdas, "Likelihood powers (rows)")->delimiter(',');
  compass->add_option("--samples", f.samples, "Samples per cell");

  auto* verify = app.add_subcommand("verify", "Run the built-in oracle suites");
  verify->add_option("--chains", f.chains, "Chains per moment-matching cell");
  verify->add_option("--tol-mean", f.tol_mean, "Mean tolerance in posterior standard deviations");
  verify->add_option("--tol-cov", f.tol_cov, "Relative covariance tolerance");
  verify->add_option("--tol-grad", f.tol_grad, "Relative gradient tolerance");
  verify->add_option("--tol-dropout", f.tol_dropout, "Absolute dropout-rate tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const auto kind = pp::parse_kind(app.get_subcommands().front()->get_name());
  try {
    const pp::RunConfig cfg = resolve(*kind, f);
    const pp::RunResult result = pp::run_experiment(*kind, cfg, f.out);
    if (!result.passed) {
      std::cerr << "verification failed; see " << (std::filesystem::path(f.out) / "verify.json").string() << "\n";
      return 1;
    }
    std::cout << pp::kind_name(*kind) << ": wrote " << result.outputs.size() << " files to " << f.out << "\n";
    return 0;
  } catch (const pp::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const pp::TrainingDivergedError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const pp::DegeneratePosteriorError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
