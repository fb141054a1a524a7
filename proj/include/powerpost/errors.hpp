#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace powerpost {

// Vector/matrix shapes that do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid user-facing configuration (schedules, powers, sampler knobs).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Power-posterior precision is not positive definite.
class DegeneratePosteriorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A sampling chain produced a non-finite state.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t level, double sigma, std::size_t chain)
      : std::runtime_error("chain " + std::to_string(chain) + " diverged at level " +
                           std::to_string(level) + " (sigma=" + std::to_string(sigma) + ")"),
        level_(level),
        sigma_(sigma),
        chain_(chain) {}

  std::size_t level() const noexcept { return level_; }
  double sigma() const noexcept { return sigma_; }
  std::size_t chain() const noexcept { return chain_; }

 private:
  std::size_t level_;
  double sigma_;
  std::size_t chain_;
};

// Training loss became non-finite.
class TrainingDivergedError : public std::runtime_error {
 public:
  explicit TrainingDivergedError(std::size_t step)
      : std::runtime_error("training diverged at step " + std::to_string(step)), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// Malformed checkpoint or dataset file. `offset` is the byte position where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace powerpost
