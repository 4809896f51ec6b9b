// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <stdexcept>
#include <string>

namespace symconj {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad einsum formula or operand shapes.
class ContractionError : public Error {
 public:
  using Error::Error;
};

/// A kernel was applied outside its mathematical domain.
class DomainError : public Error {
 public:
  DomainError(const std::string& what, std::size_t flat_index)
      : Error(what), flat_index_(flat_index) {}
  std::size_t flat_index() const { return flat_index_; }

 private:
  std::size_t flat_index_;
};

class EncodingError : public Error {
 public:
  using Error::Error;
};

class FactorizationError : public Error {
 public:
  FactorizationError(const std::string& what, std::size_t pivot)
      : Error(what), pivot_(pivot) {}
  std::size_t pivot() const { return pivot_; }

 private:
  std::size_t pivot_;
};

/// Malformed graph construction, missing bindings, shape inconsistencies.
class GraphError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class PatternError : public Error {
 public:
  using Error::Error;
};

class RuleError : public Error {
 public:
  using Error::Error;
};

/// The rewrite budget ran out before a fixed point was reached.
class NonTerminationError : public Error {
 public:
  using Error::Error;
};

/// Natural parameters fell outside a family's natural domain.
class NaturalDomainError : public Error {
 public:
  using Error::Error;
};

/// No registered family matches a statistic signature.
class NoFamilyError : public Error {
 public:
  using Error::Error;
};

/// The log-joint is not multiaffine in the requested statistics.
class ConjugacyError : public Error {
 public:
  using Error::Error;
};

}  // namespace symconj
