// Acceptance criteria 1-8. Prints one PASS/FAIL line per criterion and exits nonzero on any failure.
// Usage: acceptance [criterion numbers...]

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "powerpost/analytic.hpp"
#include "powerpost/denoiser.hpp"
#include "powerpost/experiment.hpp"
#include "powerpost/forward.hpp"
#include "powerpost/sampler.hpp"

using namespace powerpost;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed;
  std::string details;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Eigen::MatrixXd sample_cov(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd c = x.colwise() - x.rowwise().mean();
  return c * c.transpose() / static_cast<double>(x.cols() - 1);
}

// Power posterior through the gain form of the Kalman update with prior S0/alpha and noise Se/lambda.
struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

Moments kalman_power(const Eigen::MatrixXd& a, const Eigen::MatrixXd& se, const Eigen::VectorXd& mu0,
                     const Eigen::MatrixXd& s0, const Eigen::VectorXd& y, double lambda, double alpha) {
  const Eigen::MatrixXd prior = s0 / alpha;
  const Eigen::MatrixXd innovation = a * prior * a.transpose() + se / lambda;
  const Eigen::MatrixXd gain = prior * a.transpose() * innovation.ldlt().solve(Eigen::MatrixXd::Identity(a.rows(), a.rows()));
  Moments m;
  m.mean = mu0 + gain * (y - a * mu0);
  m.cov = (Eigen::MatrixXd::Identity(a.cols(), a.cols()) - gain * a) * prior;
  m.cov = 0.5 * (m.cov + m.cov.transpose());
  return m;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 2-D linear-Gaussian instance.
const Eigen::Matrix2d kS0{{1.0, 0.3}, {0.3, 0.8}};
const Eigen::Vector2d kMu0(0.2, -0.1);
const Eigen::Matrix2d kA{{1.0, 0.5}, {-0.3, 0.8}};
const Eigen::Matrix2d kSe{{0.5, 0.1}, {0.1, 0.4}};
const Eigen::Vector2d kY(0.7, -0.4);

LinearGaussianModel instance() { return LinearGaussianModel(kA, kSe, GaussianDensity(kMu0, kS0)); }

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const LinearGaussianModel model = instance();
  const Observation y{Eigen::VectorXd(kY)};
  const GaussianPosteriorSource source(model, y);
  SamplerConfig cfg;
  cfg.num_chains = 10000;
  cfg.corrector_steps = 20;
  cfg.seed = 11;
  double worst_mean = 0, worst_cov = 0;
  for (double lambda : {0.5, 1.0, 2.0}) {
    for (double alpha : {0.5, 1.0, 2.0}) {
      const Eigen::MatrixXd x = sample_power_posterior(source, y, PowerParams(lambda, alpha), cfg).as_matrix();
      const Moments exact = kalman_power(kA, kSe, kMu0, kS0, kY, lambda, alpha);
      const Eigen::VectorXd z = (x.rowwise().mean() - exact.mean).cwiseQuotient(exact.cov.diagonal().cwiseSqrt());
      worst_mean = std::max(worst_mean, z.cwiseAbs().maxCoeff());
      worst_cov = std::max(worst_cov, (sample_cov(x) - exact.cov).norm() / exact.cov.norm());
    }
  }
  const double elapsed = seconds_since(t0);
  return {worst_mean <= 0.03 && worst_cov <= 0.05 && elapsed < 120.0,
          fmt("max mean error %.4f post-std (tol 0.03), max cov error %.4f (tol 0.05), %.1f s (limit 120)", worst_mean,
              worst_cov, elapsed)};
}

Outcome criterion2() {
  const LinearGaussianModel model = instance();
  const Observation y{Eigen::VectorXd(kY)};
  const GaussianPosteriorSource source(model, y);
  bool all = true;
  int runs = 0;
  for (PredictorKind predictor : {PredictorKind::kEuler, PredictorKind::kHeun}) {
    for (double churn : {0.0, 0.5}) {
      for (std::size_t workers : {std::size_t{1}, std::size_t{3}}) {
        SamplerConfig cfg;
        cfg.num_chains = 200;
        cfg.seed = 21;
        cfg.predictor = predictor;
        cfg.churn = churn;
        cfg.workers = workers;
        const ScoreFn posterior = [&](const Eigen::MatrixXd& x, double s) { return source.annealed_scores(x, s, &y); };
        const ScoreFn prior = [&](const Eigen::MatrixXd& x, double s) { return source.annealed_scores(x, s, nullptr); };
        const Eigen::MatrixXd mixed = sample_power_posterior(source, y, PowerParams(1.0, 1.0), cfg).as_matrix();
        const Eigen::MatrixXd plain = run_annealed_sampler(posterior, 2, std::nullopt, cfg).as_matrix();
        const Eigen::MatrixXd zero = sample_power_posterior(source, y, PowerParams(0.0, 1.0), cfg).as_matrix();
        const Eigen::MatrixXd prior_only = run_annealed_sampler(prior, 2, std::nullopt, cfg).as_matrix();
        const Eigen::MatrixXd via_prior_api = sample_prior_power(source, 1.0, cfg).as_matrix();
        all = all && mixed == plain && zero == prior_only && zero == via_prior_api;
        ++runs;
      }
    }
  }
  return {all, fmt("%d predictor/churn/worker configurations, 200 chains each, %s", runs,
                   all ? "all trajectories bitwise identical" : "mismatch found")};
}

Outcome criterion3() {
  const Eigen::Matrix3d cov{{1.0, 0.2, 0.0}, {0.2, 0.7, 0.1}, {0.0, 0.1, 0.5}};
  const GaussianPriorSource source(GaussianDensity(Eigen::Vector3d(0.3, -0.2, 0.1), cov));
  SamplerConfig cfg;
  cfg.num_chains = 10000;
  cfg.seed = 31;
  std::vector<double> variances;
  std::string listing;
  for (double alpha : {0.25, 0.5, 0.75, 1.0, 1.25, 1.5}) {
    const Eigen::MatrixXd x = sample_prior_power(source, alpha, cfg).as_matrix();
    variances.push_back(sample_cov(x).trace() / 3.0);
    listing += fmt(" %.4f", variances.back());
  }
  bool monotone = true;
  for (std::size_t i = 1; i < variances.size(); ++i) monotone = monotone && variances[i] < variances[i - 1];
  const double ratio = variances.front() / variances.back();
  return {monotone && std::abs(ratio / 6.0 - 1.0) <= 0.1,
          fmt("var ratio alpha 0.25/1.5 = %.3f (target 6 +/- 10%%), mean variances", ratio) + listing +
              (monotone ? " (decreasing)" : " (NOT decreasing)")};
}

double residual_se(const Eigen::MatrixXd& a, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Eigen::VectorXd r = a * x.rowwise().mean() - y;
  const Eigen::VectorXd g = a.transpose() * (r / r.norm());
  return std::sqrt(g.dot(sample_cov(x) * g) / static_cast<double>(x.cols()));
}

Outcome criterion4() {
  ToyWorldConfig world;
  world.height = 8;
  world.width = 8;
  const AnalyticWorld aw = fit_analytic_world(world, 2000, 1e-3, 41);
  const DataPair obs = held_out_observation(world, 42);
  const Eigen::MatrixXd a = imaging_matrix(world);
  const auto d = static_cast<Eigen::Index>(world.size());
  const Eigen::MatrixXd se = aw.noise_variance * Eigen::MatrixXd::Identity(d, d);
  const GaussianPosteriorSource source(aw.model, obs.y, world.grid());
  SamplerConfig cfg;
  cfg.num_chains = 2000;
  cfg.seed = 43;

  const std::vector<double> lambdas{0.25, 0.5, 1.0, 2.0, 4.0};
  std::vector<double> closed, sampled, se_sampled;
  for (double lambda : lambdas) {
    const Moments m = kalman_power(a, se, aw.model.prior().mean(), aw.model.prior().covariance(), obs.y.values(), lambda, 1.0);
    closed.push_back(shot_residual(StateVector(m.mean, world.grid()), obs.y, world));
    const Eigen::MatrixXd x = sample_power_posterior(source, obs.y, PowerParams(lambda, 1.0), cfg).as_matrix();
    sampled.push_back(shot_residual(StateVector(Eigen::VectorXd(x.rowwise().mean()), world.grid()), obs.y, world));
    se_sampled.push_back(residual_se(a, x, obs.y.values()));
  }
  bool closed_ok = true, sampled_ok = true;
  std::string listing;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    listing += fmt(" %g:%.4f/%.4f", lambdas[i], closed[i], sampled[i]);
    if (i == 0) continue;
    closed_ok = closed_ok && closed[i] <= closed[i - 1];
    const double slack = 3.0 * std::hypot(se_sampled[i], se_sampled[i - 1]);
    sampled_ok = sampled_ok && sampled[i] <= sampled[i - 1] + slack;
  }
  return {closed_ok && sampled_ok,
          fmt("closed-form %s, sampled %s within 3 SE; lambda:closed/sampled", closed_ok ? "nonincreasing" : "INCREASES",
              sampled_ok ? "ordered" : "OUT OF ORDER") +
              listing};
}

Outcome criterion5() {
  const auto t0 = std::chrono::steady_clock::now();

  // Central differences of the loss with the random draws held fixed.
  TrainConfig cfg;
  constexpr double h = 1e-5;
  double worst_grad = 0.0;
  for (std::uint64_t draw = 0; draw < 10; ++draw) {
    DenoiserParams p = init_denoiser(2, 2, {8}, 500 + draw);
    Rng perturb(draw);
    for (auto& b : p.biases) b = 0.1 * perturb.normal_vector(static_cast<std::size_t>(b.size()));
    Rng data_rng(600 + draw);
    std::vector<DataPair> batch;
    for (int i = 0; i < 6; ++i) batch.push_back({StateVector(data_rng.normal_vector(2)), Observation(data_rng.normal_vector(2))});
    const Rng noise(700 + draw);
    Rng r = noise;
    const Eigen::VectorXd g = edm_loss(p, batch, cfg, r).gradient.flatten();
    const Eigen::VectorXd theta = p.flatten();
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      auto loss_at = [&](double v) {
        Eigen::VectorXd t = theta;
        t[i] = v;
        DenoiserParams q = p;
        q.assign(t);
        Rng rr = noise;
        return edm_loss(q, batch, cfg, rr).loss;
      };
      const double fd = (loss_at(theta[i] + h) - loss_at(theta[i] - h)) / (2 * h);
      worst_grad = std::max(worst_grad, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}));
    }
  }

  // Drop rate, counted and read back through a network that echoes its condition channel:
  // with x = 0 and y = 0 the loss is the mean squared null token over dropped elements.
  DenoiserParams echo = init_denoiser(1, 1, {}, 0);
  echo.weights[0] = Eigen::RowVector3d(0.0, 1.0, 0.0);
  std::vector<DataPair> zeros(100000, {StateVector(Eigen::VectorXd::Zero(1)), Observation(Eigen::VectorXd::Zero(1))});
  Rng drop_rng(8);
  const EdmLossResult dl = edm_loss(echo, zeros, cfg, drop_rng);
  const double counted = static_cast<double>(dl.dropped) / 1e5;
  const double echoed = dl.loss;

  // 1-D N(0,1) training against the optimal shrinkage x / (1 + sigma^2).
  TrainConfig tc;
  tc.hidden_layers = {64, 64};
  tc.batch_size = 128;
  tc.steps = 40000;
  tc.final_lr_fraction = 1e-3;
  tc.seed = 5;
  Rng g(6);
  std::vector<DataPair> data;
  for (int i = 0; i < 20000; ++i) data.push_back({StateVector(g.normal_vector(1)), Observation(g.normal_vector(1))});
  const TrainResult trained = train(data, tc);
  Rng eval(7);
  double worst_shrink = 0.0;
  for (double sigma : {0.5, 1.0}) {
    for (double x = -2.0; x <= 2.0 + 1e-9; x += 0.1) {
      const double dx = denoise(trained.params, StateVector(Eigen::VectorXd::Constant(1, x)), nullptr, sigma, eval)[0];
      worst_shrink = std::max(worst_shrink, std::abs(dx - x / (1.0 + sigma * sigma)));
    }
  }
  const double elapsed = seconds_since(t0);
  const bool ok = worst_grad < 1e-4 && std::abs(counted - 0.2) <= 0.01 && std::abs(echoed - 0.2) <= 0.01 &&
                  worst_shrink < 0.05 && elapsed < 300.0;
  return {ok, fmt("grad rel err %.2e (tol 1e-4), drop rate %.4f counted / %.4f echoed (0.2 +/- 0.01), "
                  "shrinkage err %.4f (tol 0.05), %.1f s (limit 300)",
                  worst_grad, counted, echoed, worst_shrink, elapsed)};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome criterion6() {
  const ToyWorldConfig world;
  TrainConfig tc;
  tc.seed = 61;
  const auto data = generate_dataset(world, 4000, 61);
  const TrainResult trained = train(data, tc);
  const DataPair obs = held_out_observation(world, 62);
  const DenoiserScoreSource source(trained.params, 63);
  SamplerConfig cfg;
  cfg.num_chains = 32;
  cfg.seed = 64;
  std::vector<double> med;
  for (double lambda : {1.0, 0.0}) {
    const SampleBatch batch = sample_power_posterior(source, obs.y, PowerParams(lambda, 1.0), cfg);
    std::vector<double> r;
    for (const auto& s : batch.samples) r.push_back(shot_residual(s, obs.y, world));
    med.push_back(median(r));
  }
  return {med[0] < med[1], fmt("%zux%zu toy world, median shot residual lambda=1 %.4f vs lambda=0 %.4f", world.height,
                               world.width, med[0], med[1])};
}

Outcome criterion7() {
  const Eigen::Matrix2d cov{{1.0, 0.3}, {0.3, 0.8}};
  const double sigma = 1.0;
  const Eigen::Matrix2d target = cov + sigma * sigma * Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d precision = target.inverse();
  const ScoreFn score = [&](const Eigen::MatrixXd& x, double) { return Eigen::MatrixXd(-precision * x); };
  const std::size_t n = 10000;
  std::vector<Rng> rngs;
  for (std::size_t i = 0; i < n; ++i) rngs.emplace_back(derive_stream(71, i));
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, static_cast<Eigen::Index>(n));
  const double snr = 0.2;
  corrector_update(x, score, sigma, (snr * sigma) * (snr * sigma), 500, rngs);
  const Eigen::MatrixXd c = sample_cov(x);
  const double frob = (c - target).norm() / target.norm();
  const double diag = (c.diagonal() - target.diagonal()).cwiseQuotient(target.diagonal()).cwiseAbs().maxCoeff();
  return {frob <= 0.05 && diag <= 0.05,
          fmt("corrector-only, 1e4 chains x 500 steps: cov rel err %.4f, worst variance rel err %.4f (tol 0.05)", frob, diag)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(POWERPOST_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

Outcome criterion8() {
  const fs::path root = fs::temp_directory_path() / "powerpost-acceptance" / "repro";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string world = "--height 6 --width 8 --num-steps 16 --corrector-steps 4 --seed 81";
  const fs::path ckpt = root / "train-1" / "checkpoint.ppdn";
  struct Job {
    std::string kind, flags;
  };
  const std::vector<Job> jobs{
      {"train", world + " --steps 200 --dataset-size 200"},
      {"sample", world + " --lambda 2 --alpha 0.5 --samples 5"},
      {"sample", world + " --score-source denoiser:" + ckpt.string() + " --samples 5"},
      {"sweep-prior", world + " --alphas 0.5,1,1.5 --samples 4"},
      {"sweep-likelihood", world + " --lambdas 0,1,4 --samples 4"},
      {"compass", world + " --alphas 0.5,2 --lambdas 1,2 --samples 3"},
      {"verify", "--seed 81"},
  };
  std::size_t compared = 0;
  std::vector<std::string> problems;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const std::string tag = jobs[j].kind + "-" + std::to_string(j);
    const fs::path first = jobs[j].kind == "train" ? root / "train-1" : root / (tag + "-a");
    const fs::path second = root / (tag + "-b");
    if (run_cli(jobs[j].kind + " " + jobs[j].flags + " --workers 1 --out " + first.string(), root / (tag + "-a.log")) != 0) {
      problems.push_back(tag + " failed");
      continue;
    }
    if (run_cli(jobs[j].kind + " --config " + (first / "manifest.json").string() + " --workers 3 --out " + second.string(),
                root / (tag + "-b.log")) != 0) {
      problems.push_back(tag + " rerun failed");
      continue;
    }
    auto ma = nlohmann::json::parse(slurp(first / "manifest.json"));
    auto mb = nlohmann::json::parse(slurp(second / "manifest.json"));
    if (ma.at("config").at("sampler").at("workers") != 1 || mb.at("config").at("sampler").at("workers") != 3) {
      problems.push_back(tag + " worker count not recorded");
    }
    ma["config"]["sampler"].erase("workers");
    mb["config"]["sampler"].erase("workers");
    if (ma.at("outputs") != mb.at("outputs") || ma.at("config") != mb.at("config") || ma.at("seed") != mb.at("seed")) {
      problems.push_back(tag + " manifests differ");
    }
    if (ma.at("outputs").empty()) problems.push_back(tag + " produced no outputs");
    for (const auto& rel : ma.at("outputs")) {
      const std::string name = rel.get<std::string>();
      ++compared;
      if (slurp(first / name) != slurp(second / name)) problems.push_back(tag + "/" + name + " differs");
    }
  }
  std::string details = fmt("%zu experiments, %zu output files compared (workers 1 vs 3, rerun from manifest)",
                            jobs.size(), compared);
  for (const auto& p : problems) details += "; " + p;
  return {problems.empty() && compared > 0, details};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"power-posterior moment oracle", criterion1},
      {"reduction identities", criterion2},
      {"prior-power variance law", criterion3},
      {"residual monotonicity in lambda", criterion4},
      {"training correctness", criterion5},
      {"conditioning effect", criterion6},
      {"Langevin corrector stationarity", criterion7},
      {"manifest reproducibility", criterion8},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.passed) ++failures;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.passed ? "PASS" : "FAIL", id, criteria[i].first,
                o.details.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
