#pragma once

#include <stdexcept>
#include <string>

namespace fedaudit {

// Input violates an operation's preconditions (shape mismatch, non-finite
// entries, out-of-range parameters, malformed config).
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Triangular solve hit a zero (or denormal) diagonal entry.
struct SingularSystemError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Cosine similarity requested against a zero vector.
struct UndefinedSimilarityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A history-dependent attack was asked to run without enough trace rounds.
struct NeedsHistoryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FedMIA needs at least three clients to model a non-member population.
struct InsufficientPopulationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedaudit
