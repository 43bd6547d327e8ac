#pragma once

#include <stdexcept>
#include <string>

namespace cfg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Contact features are undefined (e.g. concentric circles); the caller must perturb.
class DegenerateContact : public Error {
 public:
  using Error::Error;
};

/// A factor or query references variables the graph does not have.
class GraphInconsistency : public Error {
 public:
  using Error::Error;
};

/// The scene cannot be turned into a factor graph for the requested task.
class ModelError : public Error {
 public:
  using Error::Error;
};

/// Scene file does not conform to the schema. `path` names the offending field.
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, int iterations, double residual)
      : Error(what), iterations_(iterations), residual_(residual) {}
  int iterations() const noexcept { return iterations_; }
  double residual() const noexcept { return residual_; }

 private:
  int iterations_;
  double residual_;
};

/// Every particle of an ensemble failed in the same iteration.
class EnsembleError : public Error {
 public:
  using Error::Error;
};

}  // namespace cfg
