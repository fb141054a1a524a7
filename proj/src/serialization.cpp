#include "powerpost/serialization.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <stdexcept>
#include <string_view>
#include <thread>

namespace powerpost {

namespace {

using nlohmann::json;

const char* predictor_name(PredictorKind k) { return k == PredictorKind::kHeun ? "heun" : "euler"; }
const char* rule_name(CorrectorStepRule r) {
  return r == CorrectorStepRule::kNoiseScaled ? "noise_scaled" : "calibrated";
}

}  // namespace

void check_keys(const json& j, std::string_view section, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(section));
    }
  }
}

void to_json(json& j, const ToyWorldConfig& c) {
  j = json{{"height", c.height},
           {"width", c.width},
           {"min_layers", c.min_layers},
           {"max_layers", c.max_layers},
           {"velocity_min", c.velocity_min},
           {"velocity_max", c.velocity_max},
           {"wavelet_width", c.wavelet_width},
           {"snr_db", c.snr_db == kNoNoise ? json(nullptr) : json(c.snr_db)},
           {"undulation", c.undulation}};
}

void from_json(const json& j, ToyWorldConfig& c) {
  check_keys(j, "world", {"height", "width", "min_layers", "max_layers", "velocity_min", "velocity_max",
                              "wavelet_width", "snr_db", "undulation"});
  read_key(j, "height", c.height);
  read_key(j, "width", c.width);
  read_key(j, "min_layers", c.min_layers);
  read_key(j, "max_layers", c.max_layers);
  read_key(j, "velocity_min", c.velocity_min);
  read_key(j, "velocity_max", c.velocity_max);
  read_key(j, "wavelet_width", c.wavelet_width);
  read_key(j, "undulation", c.undulation);
  if (j.contains("snr_db")) {
    if (j["snr_db"].is_null()) c.snr_db = kNoNoise;
    else read_key(j, "snr_db", c.snr_db);
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"p_mean", c.p_mean},
           {"p_std", c.p_std},
           {"cfg_drop_prob", c.cfg_drop_prob},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"momentum", c.momentum},
           {"final_lr_fraction", c.final_lr_fraction},
           {"steps", c.steps},
           {"seed", c.seed},
           {"hidden_layers", c.hidden_layers}};
}

void from_json(const json& j, TrainConfig& c) {
  check_keys(j, "train", {"p_mean", "p_std", "cfg_drop_prob", "batch_size", "learning_rate", "momentum", "final_lr_fraction",
                              "steps", "seed", "hidden_layers"});
  read_key(j, "p_mean", c.p_mean);
  read_key(j, "p_std", c.p_std);
  read_key(j, "cfg_drop_prob", c.cfg_drop_prob);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "momentum", c.momentum);
  read_key(j, "final_lr_fraction", c.final_lr_fraction);
  read_key(j, "steps", c.steps);
  read_key(j, "seed", c.seed);
  read_key(j, "hidden_layers", c.hidden_layers);
}

void to_json(json& j, const SamplerConfig& c) {
  j = json{{"sigma_min", c.schedule.sigma_min()},
           {"sigma_max", c.schedule.sigma_max()},
           {"num_steps", c.schedule.size()},
           {"rho", c.schedule.rho()},
           {"churn", c.churn},
           {"corrector_steps", c.corrector_steps},
           {"corrector_snr", c.corrector_snr},
           {"step_rule", rule_name(c.step_rule)},
           {"pilot_chains", c.pilot_chains},
           {"predictor", predictor_name(c.predictor)},
           {"num_chains", c.num_chains},
           {"seed", c.seed},
           {"workers", c.workers}};
}

void from_json(const json& j, SamplerConfig& c) {
  check_keys(j, "sampler", {"sigma_min", "sigma_max", "num_steps", "rho", "churn", "corrector_steps",
                                "corrector_snr", "step_rule", "pilot_chains", "predictor", "num_chains", "seed",
                                "workers"});
  double sigma_min = c.schedule.sigma_min();
  double sigma_max = c.schedule.sigma_max();
  std::size_t steps = c.schedule.size();
  double rho = c.schedule.rho();
  read_key(j, "sigma_min", sigma_min);
  read_key(j, "sigma_max", sigma_max);
  read_key(j, "num_steps", steps);
  read_key(j, "rho", rho);
  c.schedule = build_schedule(sigma_min, sigma_max, steps, rho);
  read_key(j, "churn", c.churn);
  read_key(j, "corrector_steps", c.corrector_steps);
  read_key(j, "corrector_snr", c.corrector_snr);
  read_key(j, "pilot_chains", c.pilot_chains);
  read_key(j, "num_chains", c.num_chains);
  read_key(j, "seed", c.seed);
  read_key(j, "workers", c.workers);
  if (j.contains("step_rule")) {
    std::string s;
    read_key(j, "step_rule", s);
    if (s == "calibrated") c.step_rule = CorrectorStepRule::kCalibrated;
    else if (s == "noise_scaled") c.step_rule = CorrectorStepRule::kNoiseScaled;
    else throw ConfigError("step_rule must be 'calibrated' or 'noise_scaled'");
  }
  if (j.contains("predictor")) {
    std::string s;
    read_key(j, "predictor", s);
    if (s == "euler") c.predictor = PredictorKind::kEuler;
    else if (s == "heun") c.predictor = PredictorKind::kHeun;
    else throw ConfigError("predictor must be 'euler' or 'heun'");
  }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& contents) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) + "." +
         std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw std::runtime_error("failed writing " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace powerpost
