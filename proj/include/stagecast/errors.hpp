#pragma once

#include <stdexcept>
#include <string>

namespace stagecast {

// Invalid or inconsistent user-supplied configuration. Maps to exit status 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A required upstream artifact (corpus, feature store, checkpoint) is absent.
// Maps to exit status 3.
struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or contract-violating data encountered at runtime.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Forge/network failure. `retryable` distinguishes transient conditions
// (timeouts, 5xx, rate limits) from permanent ones (404).
struct NetworkError : std::runtime_error {
  bool retryable;
  explicit NetworkError(const std::string& msg, bool retryable_ = false)
      : std::runtime_error(msg), retryable(retryable_) {}
};

struct NumericsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace stagecast
