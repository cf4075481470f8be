#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace jitleak {

/// Root of every exception raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& what)
      : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
        line_(line),
        column_(column),
        reason_(what) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::size_t line_;
  std::size_t column_;
  std::string reason_;
};

class AnalysisError : public Error {
 public:
  using Error::Error;
};

/// The machine has no applicable transition.
class Stuck : public Error {
 public:
  explicit Stuck(const std::string& reason) : Error("stuck: " + reason), reason_(reason) {}
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string reason_;
};

class NonTermination : public Error {
 public:
  explicit NonTermination(std::size_t budget)
      : Error("step budget of " + std::to_string(budget) + " exhausted"), budget_(budget) {}
  std::size_t budget() const noexcept { return budget_; }

 private:
  std::size_t budget_;
};

class MissingInput : public Error {
 public:
  using Error::Error;
};

class OracleError : public Error {
 public:
  using Error::Error;
};

class UnknownMethod : public Error {
 public:
  explicit UnknownMethod(const std::string& name) : Error("unknown method '" + name + "'"), name_(name) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

class TransformError : public Error {
 public:
  using Error::Error;
};

class InlineError : public TransformError {
 public:
  using TransformError::TransformError;
};

class InvalidDirective : public Error {
 public:
  using Error::Error;
};

class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

class EmptySample : public Error {
 public:
  EmptySample() : Error("mutual information needs at least one sample") {}
};

}  // namespace jitleak
