#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cace {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
  ParseError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

private:
  std::size_t row_;
};

class ValidationError : public Error {
public:
  ValidationError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

private:
  std::size_t row_;
};

class EmptyArmError : public Error {
public:
  using Error::Error;
};

/// Truncation region has probability below double precision (|standardized bound| > 37).
class DegenerateTruncationError : public Error {
public:
  using Error::Error;
};

class SingularPosteriorError : public Error {
public:
  using Error::Error;
};

class InsufficientDrawsError : public Error {
public:
  using Error::Error;
};

class EmptyPatternError : public Error {
public:
  using Error::Error;
};

class AllUndefinedError : public Error {
public:
  using Error::Error;
};

class CalibrationError : public Error {
public:
  using Error::Error;
};

class TooLargeError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  ConfigError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

class DigestMismatchError : public Error {
public:
  using Error::Error;
};

/// A sampler block failed; carries the iteration and block name for diagnosis.
class ChainAbortError : public Error {
public:
  ChainAbortError(std::size_t chain, std::size_t iteration, std::string block,
                  const std::string& cause)
      : Error("chain " + std::to_string(chain) + " aborted at iteration " +
              std::to_string(iteration) + " in block '" + block + "': " + cause),
        chain_(chain), iteration_(iteration), block_(std::move(block)) {}
  std::size_t chain() const noexcept { return chain_; }
  std::size_t iteration() const noexcept { return iteration_; }
  const std::string& block() const noexcept { return block_; }

private:
  std::size_t chain_;
  std::size_t iteration_;
  std::string block_;
};

}  // namespace cace
