#pragma once

#include <stdexcept>
#include <string>

namespace ngramlab {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed malformed data (bad symbol id, wrong history length, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// A generator or model specification is invalid.
class SpecError : public Error {
 public:
  using Error::Error;
};

// A configured memory or state cap would be exceeded.
class ResourceError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

// Two artifacts that must agree (scores vs corpus, train vs test) do not.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

// The history Markov chain never absorbs (no reachable EOS).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class DegenerateColumnError : public Error {
 public:
  using Error::Error;
};

class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace ngramlab
