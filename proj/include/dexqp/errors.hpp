#pragma once

#include <stdexcept>
#include <string>

namespace dexqp {

/// Malformed document (not valid JSON, wrong value types, missing keys).
class ParseError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Well-formed document that violates a model or trace invariant.
class ValidationError : public std::runtime_error
{
public:
  ValidationError(std::string field, const std::string & what)
  : std::runtime_error(field + ": " + what), field_(std::move(field))
  {
  }

  /// Name of the offending field or entity.
  const std::string & field() const noexcept { return field_; }

private:
  std::string field_;
};

/// Vector or matrix length does not match the model.
class DimensionError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace dexqp
