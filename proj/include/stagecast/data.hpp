#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stagecast/rng.hpp"

namespace stagecast::data {

inline constexpr int kWindowMonths = 24;
inline constexpr int kNumMetrics = 20;

// The 20 base activity metrics, in canonical order. This order is the layout
// contract for sequences, tabular blocks, and file formats.
enum class Metric {
  kCommitCount = 0,
  kCommitterCount,
  kPullRequests,
  kPrAvgCommits,
  kPrAvgFiles,
  kPrTotalFiles,
  kBotContributors,
  kNewContributors,
  kRepeatContributors,
  kBusFactor,
  kIssuesCount,
  kIssueComments,
  kIssueDurationDays,
  kIssueTtfrDays,
  kPrReviewComments,
  kPrReviewDurationDays,
  kPrTotalComments,
  kPrTtfrDays,
  kPrAcceptanceRate,
  kReleases,
};

const std::array<std::string, kNumMetrics>& metric_names();
int metric_index(const std::string& name);

enum class StageLabel { kClub = 0, kContribMid = 1, kFederation = 2, kToy = 3 };
inline constexpr int kNumStages = 4;
const std::array<std::string, kNumStages>& stage_names();  // club, contribMid, federation, toy
std::string to_string(StageLabel s);
StageLabel stage_from_string(const std::string& s);

// Calendar month, compared chronologically.
struct Month {
  int year = 0;
  int month = 1;  // 1..12
  static Month parse(const std::string& ym);  // "YYYY-MM"
  std::string str() const;
  Month plus(int months) const;
  // this - other, in months.
  int diff(const Month& other) const;
  auto operator<=>(const Month&) const = default;
};

// Days since 1970-01-01 (fractional if a time component is present).
// Accepts "YYYY-MM-DD" and "YYYY-MM-DDTHH:MM:SS[Z]".
double parse_date_days(const std::string& iso);
Month month_of_date(const std::string& iso);

struct MonthlyActivityRecord {
  std::string repo_id;
  int month_index = 0;  // 0..23
  std::array<double, kNumMetrics> metrics{};

  double& at(Metric m) { return metrics[int(m)]; }
  double at(Metric m) const { return metrics[int(m)]; }
};

// Throws DataError when an invariant is violated (negative values,
// acceptance rate outside [0,1], month index out of range).
void validate(const MonthlyActivityRecord& r);

struct RepoMetadata {
  std::string repo_id;
  long unique_contributors_total = 0;  // cumulative over repo lifetime
  long stargazers = 0;                 // snapshot at window end
  std::string created_at;              // YYYY-MM-DD
  Month window_start;
  Month window_end;  // window_start + 23
};

// Ordered labeling rule over the metadata snapshot:
//   contributors < 6                         -> toy
//   contributors <= 75                       -> contribMid
//   stargazers > 1000 and stars/contribs > 2 -> federation
//   otherwise                                -> club
StageLabel label_stage(const RepoMetadata& meta);

struct RepoRecord {
  RepoMetadata meta;
  std::vector<MonthlyActivityRecord> months;  // exactly 24, chronological
  StageLabel label = StageLabel::kToy;
};

using Corpus = std::vector<RepoRecord>;

void validate(const RepoRecord& r);

// ---- Synthetic corpora ----------------------------------------------------

struct SynthesisConfig {
  // Repos per stage, indexed by StageLabel order (club, contribMid,
  // federation, toy).
  std::array<int, kNumStages> per_stage{0, 0, 0, 0};
  double noise_level = 0.3;      // in [0,1]
  double boundary_margin = 0.25; // relative distance kept from label thresholds
  uint64_t seed = 42;
  Month window_start{2022, 6};
};

// Stage-conditioned generator. Every emitted repo satisfies
// label_stage(meta) == label, with metadata at relative distance >=
// boundary_margin from each threshold it must clear. Deterministic in seed.
Corpus generate_synthetic_corpus(const SynthesisConfig& cfg);

// ---- Raw forge activity and aggregation ------------------------------------

struct RawCommit {
  std::string author;
  std::string date;
};

struct RawIssue {
  std::string created;
  std::string closed;          // empty if open
  std::string first_response;  // empty if none
  double comments = 0;
};

struct RawPull {
  std::string created;
  std::string closed;  // decision time (merge or close); empty if open
  std::string first_review;
  bool merged = false;
  double commits = 0;
  double changed_files = 0;
  double review_comments = 0;
  double total_comments = 0;
};

struct RawRelease {
  std::string published;
};

struct RawActivity {
  std::string repo_id;
  std::string created_at;
  long stargazers = 0;
  bool has_stargazers = false;
  // Distinct authors who contributed before the window.
  std::vector<std::string> prior_authors;
  std::vector<RawCommit> commits;
  std::vector<RawIssue> issues;
  std::vector<RawPull> pulls;
  std::vector<RawRelease> releases;
};

RawActivity parse_raw_activity(const std::vector<nlohmann::json>& pages);

struct AggregationOptions {
  // Minimum commit share the top contributors must cover for the bus factor.
  double bus_factor_coverage = 0.5;
  std::vector<std::string> bot_allowlist;  // never treated as bots
  std::vector<std::string> bot_denylist;   // always treated as bots
};

bool is_bot_account(const std::string& login, const AggregationOptions& opts);

// Exactly 24 records, month_index 0..23. Months without events are all-zero.
// Events outside the window are rejected with a DataError naming the event.
std::vector<MonthlyActivityRecord> aggregate_monthly(const RawActivity& raw, Month window_start,
                                                     const AggregationOptions& opts = {});

RepoMetadata snapshot_metadata(const RawActivity& raw, Month window_start);

// ---- Corpus files -----------------------------------------------------------
// Newline-delimited JSON, one repo per line:
//   {"repo_id", "metadata": {...}, "months": [ {20 metric keys} x24 ], "label"}
// plus an equivalent wide CSV with one row per repo-month.

void write_corpus_ndjson(const Corpus& corpus, const std::string& path);
Corpus read_corpus_ndjson(const std::string& path);
void write_corpus_csv(const Corpus& corpus, const std::string& path);

nlohmann::json repo_to_json(const RepoRecord& r);
RepoRecord repo_from_json(const nlohmann::json& j);

}  // namespace stagecast::data
