#include "stagecast/forge.hpp"

#include <httplib.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include "stagecast/errors.hpp"

namespace stagecast::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string sanitize_key(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.')
                              ? c
                              : '_';
  return out;
}

}  // namespace

TokenBucket::TokenBucket(double capacity, double per_minute)
    : capacity_(capacity), tokens_(capacity), per_second_(per_minute / 60.0),
      last_refill_(now_seconds()) {}

double TokenBucket::refill_locked() {
  const double now = now_seconds();
  tokens_ = std::min(capacity_, tokens_ + (now - last_refill_) * per_second_);
  last_refill_ = now;
  return tokens_;
}

void TokenBucket::acquire() {
  std::unique_lock<std::mutex> lk(mu_);
  for (;;) {
    if (refill_locked() >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const double wait_s = (1.0 - tokens_) / per_second_;
    cv_.wait_for(lk, std::chrono::duration<double>(wait_s));
  }
}

bool TokenBucket::try_acquire() {
  std::lock_guard<std::mutex> lk(mu_);
  if (refill_locked() >= 1.0) {
    tokens_ -= 1.0;
    return true;
  }
  return false;
}

ForgeClient::ForgeClient(ForgeOptions opts)
    : opts_(std::move(opts)),
      bucket_(std::max(1, opts_.requests_per_minute / 4), double(opts_.requests_per_minute)) {}

std::string ForgeClient::cache_path(const std::string& repo_id, Month window_start) const {
  return (fs::path(opts_.cache_dir) /
          (sanitize_key(repo_id) + "__" + window_start.str() + "__24.json"))
      .string();
}

json ForgeClient::get_json(const std::string& path) {
  std::string host = opts_.base_url;
  if (host.empty()) throw ConfigError("forge base_url is not configured");

  httplib::Headers headers;
  if (!opts_.token.empty()) headers.emplace("Authorization", "Bearer " + opts_.token);

  double backoff_ms = opts_.backoff_initial_ms;
  for (int attempt = 0;; ++attempt) {
    bucket_.acquire();
    httplib::Client client(host.c_str());
    client.set_connection_timeout(10);
    client.set_read_timeout(30);
    ++requests_;
    auto res = client.Get(path.c_str(), headers);

    bool retryable;
    std::string why;
    if (!res) {
      retryable = true;
      why = "connection failure";
    } else if (res->status == 200) {
      return json::parse(res->body);
    } else if (res->status == 404) {
      throw NetworkError("repository not found: " + path, /*retryable=*/false);
    } else if (res->status == 429 || res->status >= 500) {
      retryable = true;
      why = "status " + std::to_string(res->status);
      if (res->has_header("Retry-After")) {
        const double ra = std::atof(res->get_header_value("Retry-After").c_str());
        backoff_ms = std::max(backoff_ms, ra * 1000.0);
      }
    } else {
      throw NetworkError("forge request failed (" + std::to_string(res->status) + "): " + path,
                         /*retryable=*/false);
    }

    if (attempt >= opts_.max_retries)
      throw NetworkError("forge request failed after retries (" + why + "): " + path,
                         /*retryable=*/true);
    if (opts_.backoff_sleep)
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(backoff_ms));
    backoff_ms *= 2.0;
  }
}

std::vector<json> ForgeClient::fetch_repo_activity(const std::string& repo_id,
                                                   Month window_start) {
  // Cache hit: serve bytes from disk, no network.
  std::string cpath;
  if (!opts_.cache_dir.empty()) {
    cpath = cache_path(repo_id, window_start);
    std::ifstream in(cpath, std::ios::binary);
    if (in) {
      json all = json::parse(std::string((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>()));
      return std::vector<json>(all.begin(), all.end());
    }
  }

  std::vector<json> pages;
  json repo = get_json("/api/repos/" + repo_id);
  const std::string created = repo.at("created_at").get<std::string>();
  if (month_of_date(created).diff(window_start) > 0)
    throw DataError("insufficient history: repo " + repo_id + " was created " + created +
                    ", inside the requested window");
  pages.push_back(json{{"repo", repo}});

  int page = 1;
  for (;;) {
    json body = get_json("/api/repos/" + repo_id + "/activity?start=" + window_start.str() +
                         "&months=24&page=" + std::to_string(page));
    const bool more = body.contains("next_page") && !body["next_page"].is_null();
    pages.push_back(std::move(body));
    if (!more) break;
    ++page;
  }

  if (!cpath.empty()) {
    fs::create_directories(opts_.cache_dir);
    // Atomic per key: write a temp file, then rename into place.
    const std::string tmp = cpath + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << json(pages).dump();
    }
    fs::rename(tmp, cpath);
  }
  return pages;
}

RepoRecord ForgeClient::ingest_repo(const std::string& repo_id, Month window_start,
                                    const AggregationOptions& agg) {
  RawActivity raw = parse_raw_activity(fetch_repo_activity(repo_id, window_start));
  RepoRecord rec;
  rec.meta = snapshot_metadata(raw, window_start);
  rec.months = aggregate_monthly(raw, window_start, agg);
  rec.label = label_stage(rec.meta);
  validate(rec);
  return rec;
}

}  // namespace stagecast::data
