#pragma once

#include <stdexcept>
#include <string>

namespace joinsense {

// Exit-code contract: usage errors → 1, data errors → 2, non-convergence → 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IngestError : DataError {
  using DataError::DataError;
};

struct SchemaError : DataError {
  using DataError::DataError;
};

struct ConfigError : UsageError {
  using UsageError::UsageError;
};

// Raised when an oracle would exceed its enumeration budget.
struct BudgetError : UsageError {
  using UsageError::UsageError;
};

}  // namespace joinsense
