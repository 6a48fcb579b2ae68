#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace actgraph {

// Root of everything the library throws on bad input or configuration.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input (JSON syntax, record layout). Message carries the position.
class ParseError : public Error {
 public:
  using Error::Error;
};

// A class, attribute or relationship name outside the query vocabulary.
class VocabularyError : public Error {
 public:
  VocabularyError(std::string token, const std::string& what)
      : Error(what + ": '" + token + "'"), token_(std::move(token)) {}
  const std::string& token() const { return token_; }

 private:
  std::string token_;
};

// Structural violations of the activity graph invariants.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join_violations(const std::vector<std::string>& v);
  std::vector<std::string> violations_;
};

// Missing concept model or inconsistent model bundle.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Observation data does not satisfy a model's requirements (missing margin, empty set...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Training data with a single class, archives too small to sample, ...
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// The requested recall target cannot be met by any threshold.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// Exhaustive routines refuse instances above their size limit.
class RefusalError : public Error {
 public:
  using Error::Error;
};

}  // namespace actgraph
