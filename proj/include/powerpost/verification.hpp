#pragma once

// Self-check suites run by `powerpost verify`.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace powerpost {

struct VerifySettings {
  std::size_t chains = 10000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  double tol_mean = 0.03;  // posterior standard deviations
  double tol_cov = 0.05;   // relative Frobenius error
  double tol_grad = 1e-4;  // relative gradient error
  double tol_dropout = 0.01;
};

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  nlohmann::json details;
};

std::vector<CheckResult> run_verification_suites(const VerifySettings& settings);

nlohmann::json report_json(const std::vector<CheckResult>& checks);

}  // namespace powerpost
