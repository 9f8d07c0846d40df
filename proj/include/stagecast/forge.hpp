#pragma once

#include <condition_variable>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "stagecast/data.hpp"

namespace stagecast::data {

// Shared rate-limit budget for concurrent fetches. acquire() blocks until a
// token is available; tokens refill continuously at `per_minute / 60` per
// second up to `capacity`.
class TokenBucket {
 public:
  TokenBucket(double capacity, double per_minute);
  void acquire();
  // Non-blocking variant used by tests.
  bool try_acquire();

 private:
  double refill_locked();
  std::mutex mu_;
  std::condition_variable cv_;
  double capacity_;
  double tokens_;
  double per_second_;
  double last_refill_;  // seconds, monotonic
};

struct ForgeOptions {
  std::string base_url;       // e.g. http://localhost:9280
  std::string token;          // bearer token, may be empty (anonymous)
  std::string cache_dir;      // raw page cache; empty disables caching
  int requests_per_minute = 60;
  int max_retries = 4;
  double backoff_initial_ms = 250.0;  // doubles per retry
  bool backoff_sleep = true;          // tests disable real sleeping
};

// Client for the documented forge activity protocol:
//   GET /api/repos/{id}                              repo header
//   GET /api/repos/{id}/activity?start=YYYY-MM&months=24&page=N
// Pages are cached byte-identically under cache_dir keyed by
// (repo_id, window); cached fetches perform no network calls.
class ForgeClient {
 public:
  explicit ForgeClient(ForgeOptions opts);

  // Returns the raw pages (repo header page first). Throws NetworkError
  // (retryable=false) for missing repos, DataError("insufficient history")
  // when the repo is younger than the window.
  std::vector<nlohmann::json> fetch_repo_activity(const std::string& repo_id, Month window_start);

  // Fetch + parse + aggregate + label in one step.
  RepoRecord ingest_repo(const std::string& repo_id, Month window_start,
                         const AggregationOptions& agg = {});

  int network_requests() const { return requests_; }

 private:
  std::string cache_path(const std::string& repo_id, Month window_start) const;
  nlohmann::json get_json(const std::string& path);

  ForgeOptions opts_;
  TokenBucket bucket_;
  int requests_ = 0;
};

}  // namespace stagecast::data
