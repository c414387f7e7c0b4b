#pragma once

#include <stdexcept>
#include <string>

namespace imic {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A user-supplied specification failed validation. `field()` names the
/// offending entry (e.g. "tasks[2].twin").
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Parameters are individually valid but cannot be combined (e.g. P*K larger
/// than the dataset).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared. `context()` carries module/layer/step info.
class NumericError : public Error {
 public:
  NumericError(std::string context, const std::string& message)
      : Error(context + ": " + message), context_(std::move(context)) {}
  const std::string& context() const noexcept { return context_; }

 private:
  std::string context_;
};

}  // namespace imic
