#pragma once

#include <stdexcept>
#include <string>

namespace modalbound {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Data does not match the schema it is paired with.
class SchemaMismatchError : public Error {
 public:
  using Error::Error;
};

// A modality required by the requested subset is absent from a sample.
class MissingModalityError : public Error {
 public:
  using Error::Error;
};

// A matrix expected to be invertible is rank deficient.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, int rank, int dim)
      : Error(what + " (rank " + std::to_string(rank) + " of " +
              std::to_string(dim) + ")"),
        rank_(rank),
        dim_(dim) {}

  int rank() const { return rank_; }
  int dim() const { return dim_; }

 private:
  int rank_;
  int dim_;
};

}  // namespace modalbound
