#include "stagecast/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "stagecast/errors.hpp"

namespace stagecast::data {

using nlohmann::json;

const std::array<std::string, kNumMetrics>& metric_names() {
  static const std::array<std::string, kNumMetrics> names = {
      "commit_count",        "committer_count",     "pull_requests",
      "pr_avg_commits",      "pr_avg_files",        "pr_total_files",
      "bot_contributors",    "new_contributors",    "repeat_contributors",
      "bus_factor",          "issues_count",        "issue_comments",
      "issue_duration_days", "issue_ttfr_days",     "pr_review_comments",
      "pr_review_duration_days", "pr_total_comments", "pr_ttfr_days",
      "pr_acceptance_rate",  "releases",
  };
  return names;
}

int metric_index(const std::string& name) {
  const auto& names = metric_names();
  for (int i = 0; i < kNumMetrics; ++i)
    if (names[i] == name) return i;
  throw DataError("unknown metric name: " + name);
}

const std::array<std::string, kNumStages>& stage_names() {
  static const std::array<std::string, kNumStages> names = {"club", "contribMid", "federation",
                                                            "toy"};
  return names;
}

std::string to_string(StageLabel s) { return stage_names()[int(s)]; }

StageLabel stage_from_string(const std::string& s) {
  const auto& names = stage_names();
  for (int i = 0; i < kNumStages; ++i)
    if (names[i] == s) return StageLabel(i);
  throw DataError("unknown stage label: " + s);
}

Month Month::parse(const std::string& ym) {
  int y = 0, m = 0;
  if (std::sscanf(ym.c_str(), "%d-%d", &y, &m) != 2 || m < 1 || m > 12)
    throw DataError("bad month string: " + ym);
  return {y, m};
}

std::string Month::str() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
  return buf;
}

Month Month::plus(int months) const {
  int total = year * 12 + (month - 1) + months;
  int y = total / 12;
  int m = total % 12;
  if (m < 0) {
    m += 12;
    --y;
  }
  return {y, m + 1};
}

int Month::diff(const Month& other) const {
  return (year * 12 + month) - (other.year * 12 + other.month);
}

namespace {

// Howard Hinnant's civil-days algorithm.
long days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = unsigned(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + long(doe) - 719468;
}

}  // namespace

double parse_date_days(const std::string& iso) {
  int y = 0, mo = 0, d = 0, hh = 0, mi = 0, ss = 0;
  int n = std::sscanf(iso.c_str(), "%d-%d-%dT%d:%d:%d", &y, &mo, &d, &hh, &mi, &ss);
  if (n < 3 || mo < 1 || mo > 12 || d < 1 || d > 31)
    throw DataError("bad date string: " + iso);
  double days = double(days_from_civil(y, unsigned(mo), unsigned(d)));
  if (n > 3) days += (hh * 3600.0 + mi * 60.0 + ss) / 86400.0;
  return days;
}

Month month_of_date(const std::string& iso) {
  int y = 0, mo = 0, d = 0;
  if (std::sscanf(iso.c_str(), "%d-%d-%d", &y, &mo, &d) < 2 || mo < 1 || mo > 12)
    throw DataError("bad date string: " + iso);
  return {y, mo};
}

void validate(const MonthlyActivityRecord& r) {
  if (r.month_index < 0 || r.month_index >= kWindowMonths)
    throw DataError("month_index out of range for " + r.repo_id);
  for (int i = 0; i < kNumMetrics; ++i) {
    if (!(r.metrics[i] >= 0.0) || !std::isfinite(r.metrics[i]))
      throw DataError("negative or non-finite metric " + metric_names()[i] + " in " + r.repo_id);
  }
  if (r.at(Metric::kPrAcceptanceRate) > 1.0)
    throw DataError("pr_acceptance_rate > 1 in " + r.repo_id);
}

StageLabel label_stage(const RepoMetadata& meta) {
  if (meta.unique_contributors_total < 0 || meta.stargazers < 0)
    throw DataError("label_stage: negative inputs for " + meta.repo_id);
  const long c = meta.unique_contributors_total;
  const long s = meta.stargazers;
  if (c < 6) return StageLabel::kToy;
  if (c <= 75) return StageLabel::kContribMid;
  if (s > 1000 && double(s) / double(c) > 2.0) return StageLabel::kFederation;
  return StageLabel::kClub;
}

void validate(const RepoRecord& r) {
  if (int(r.months.size()) != kWindowMonths)
    throw DataError("repo " + r.meta.repo_id + " does not have 24 months");
  long max_committers = 0;
  for (int i = 0; i < kWindowMonths; ++i) {
    if (r.months[i].month_index != i)
      throw DataError("repo " + r.meta.repo_id + " has non-contiguous month indices");
    validate(r.months[i]);
    max_committers = std::max(max_committers, long(r.months[i].at(Metric::kCommitterCount)));
  }
  if (r.meta.window_end.diff(r.meta.window_start) != kWindowMonths - 1)
    throw DataError("repo " + r.meta.repo_id + " window does not span 24 months");
  if (r.meta.unique_contributors_total < max_committers)
    throw DataError("repo " + r.meta.repo_id +
                    " has fewer unique contributors than a month's committers");
}

bool is_bot_account(const std::string& login, const AggregationOptions& opts) {
  for (const auto& a : opts.bot_allowlist)
    if (a == login) return false;
  for (const auto& d : opts.bot_denylist)
    if (d == login) return true;
  std::string lower = login;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  auto ends_with = [&](const std::string& suffix) {
    return lower.size() >= suffix.size() &&
           lower.compare(lower.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with("[bot]") || ends_with("-bot") || ends_with("_bot");
}

namespace {

int window_month_index(const std::string& date, Month window_start, const char* what) {
  const int idx = month_of_date(date).diff(window_start);
  if (idx < 0 || idx >= kWindowMonths)
    throw DataError(std::string(what) + " at " + date + " falls outside the 24-month window");
  return idx;
}

}  // namespace

std::vector<MonthlyActivityRecord> aggregate_monthly(const RawActivity& raw, Month window_start,
                                                     const AggregationOptions& opts) {
  std::vector<MonthlyActivityRecord> out(kWindowMonths);
  for (int i = 0; i < kWindowMonths; ++i) {
    out[i].repo_id = raw.repo_id;
    out[i].month_index = i;
  }

  std::vector<std::map<std::string, long>> commits_by_author(kWindowMonths);
  std::vector<std::set<std::string>> bots(kWindowMonths);
  for (const auto& c : raw.commits) {
    const int m = window_month_index(c.date, window_start, "commit");
    commits_by_author[m][c.author] += 1;
    if (is_bot_account(c.author, opts)) bots[m].insert(c.author);
  }

  std::set<std::string> seen(raw.prior_authors.begin(), raw.prior_authors.end());
  std::set<std::string> prev_month_authors(raw.prior_authors.begin(), raw.prior_authors.end());
  for (int m = 0; m < kWindowMonths; ++m) {
    auto& rec = out[m];
    const auto& by_author = commits_by_author[m];
    long total_commits = 0;
    for (const auto& [author, n] : by_author) total_commits += n;
    rec.at(Metric::kCommitCount) = double(total_commits);
    rec.at(Metric::kCommitterCount) = double(by_author.size());
    rec.at(Metric::kBotContributors) = double(bots[m].size());

    long fresh = 0, repeat = 0;
    std::set<std::string> current;
    for (const auto& [author, n] : by_author) {
      current.insert(author);
      if (!seen.count(author)) ++fresh;
      if (prev_month_authors.count(author)) ++repeat;
    }
    rec.at(Metric::kNewContributors) = double(fresh);
    rec.at(Metric::kRepeatContributors) = double(repeat);
    for (const auto& a : current) seen.insert(a);
    prev_month_authors = std::move(current);

    // Bus factor: smallest set of top committers covering the configured
    // share of the month's commits.
    if (total_commits > 0) {
      std::vector<long> counts;
      counts.reserve(by_author.size());
      for (const auto& [author, n] : by_author) counts.push_back(n);
      std::sort(counts.rbegin(), counts.rend());
      long cum = 0;
      int k = 0;
      for (long n : counts) {
        cum += n;
        ++k;
        if (double(cum) >= opts.bus_factor_coverage * double(total_commits)) break;
      }
      rec.at(Metric::kBusFactor) = double(k);
    }
  }

  // Issues: ttfr attaches to the opening month, duration to the closing month.
  std::vector<double> ttfr_sum(kWindowMonths, 0.0), dur_sum(kWindowMonths, 0.0);
  std::vector<long> ttfr_n(kWindowMonths, 0), dur_n(kWindowMonths, 0);
  for (const auto& is : raw.issues) {
    const int m = window_month_index(is.created, window_start, "issue");
    out[m].at(Metric::kIssuesCount) += 1;
    out[m].at(Metric::kIssueComments) += is.comments;
    if (!is.first_response.empty()) {
      ttfr_sum[m] += parse_date_days(is.first_response) - parse_date_days(is.created);
      ttfr_n[m] += 1;
    }
    if (!is.closed.empty()) {
      const int cm = window_month_index(is.closed, window_start, "issue close");
      dur_sum[cm] += parse_date_days(is.closed) - parse_date_days(is.created);
      dur_n[cm] += 1;
    }
  }
  for (int m = 0; m < kWindowMonths; ++m) {
    if (ttfr_n[m]) out[m].at(Metric::kIssueTtfrDays) = std::max(0.0, ttfr_sum[m] / ttfr_n[m]);
    if (dur_n[m]) out[m].at(Metric::kIssueDurationDays) = std::max(0.0, dur_sum[m] / dur_n[m]);
  }

  // Pull requests: size metrics attach to the opening month, decision metrics
  // to the closing month.
  std::vector<double> pr_commits(kWindowMonths, 0.0), pr_files(kWindowMonths, 0.0);
  std::vector<long> pr_opened(kWindowMonths, 0);
  std::vector<double> pr_ttfr_sum(kWindowMonths, 0.0), rev_dur_sum(kWindowMonths, 0.0);
  std::vector<long> pr_ttfr_n(kWindowMonths, 0), closed_n(kWindowMonths, 0), merged_n(kWindowMonths, 0);
  for (const auto& pr : raw.pulls) {
    const int m = window_month_index(pr.created, window_start, "pull request");
    pr_opened[m] += 1;
    pr_commits[m] += pr.commits;
    pr_files[m] += pr.changed_files;
    out[m].at(Metric::kPrTotalFiles) += pr.changed_files;
    out[m].at(Metric::kPrReviewComments) += pr.review_comments;
    out[m].at(Metric::kPrTotalComments) += pr.total_comments;
    if (!pr.first_review.empty()) {
      pr_ttfr_sum[m] += parse_date_days(pr.first_review) - parse_date_days(pr.created);
      pr_ttfr_n[m] += 1;
    }
    if (!pr.closed.empty()) {
      const int cm = window_month_index(pr.closed, window_start, "pull request close");
      rev_dur_sum[cm] += parse_date_days(pr.closed) - parse_date_days(pr.created);
      closed_n[cm] += 1;
      if (pr.merged) merged_n[cm] += 1;
    }
  }
  for (int m = 0; m < kWindowMonths; ++m) {
    out[m].at(Metric::kPullRequests) = double(pr_opened[m]);
    if (pr_opened[m]) {
      out[m].at(Metric::kPrAvgCommits) = pr_commits[m] / pr_opened[m];
      out[m].at(Metric::kPrAvgFiles) = pr_files[m] / pr_opened[m];
    }
    if (pr_ttfr_n[m]) out[m].at(Metric::kPrTtfrDays) = std::max(0.0, pr_ttfr_sum[m] / pr_ttfr_n[m]);
    if (closed_n[m]) {
      out[m].at(Metric::kPrReviewDurationDays) = std::max(0.0, rev_dur_sum[m] / closed_n[m]);
      out[m].at(Metric::kPrAcceptanceRate) = double(merged_n[m]) / double(closed_n[m]);
    }
  }

  for (const auto& rel : raw.releases) {
    const int m = window_month_index(rel.published, window_start, "release");
    out[m].at(Metric::kReleases) += 1;
  }

  for (const auto& rec : out) validate(rec);
  return out;
}

RepoMetadata snapshot_metadata(const RawActivity& raw, Month window_start) {
  if (!raw.has_stargazers)
    throw DataError("repo " + raw.repo_id + ": stargazer count missing, labels cannot be assigned");
  RepoMetadata meta;
  meta.repo_id = raw.repo_id;
  meta.created_at = raw.created_at;
  meta.stargazers = raw.stargazers;
  meta.window_start = window_start;
  meta.window_end = window_start.plus(kWindowMonths - 1);
  std::set<std::string> all(raw.prior_authors.begin(), raw.prior_authors.end());
  for (const auto& c : raw.commits) all.insert(c.author);
  meta.unique_contributors_total = long(all.size());
  return meta;
}

RawActivity parse_raw_activity(const std::vector<json>& pages) {
  RawActivity raw;
  bool saw_repo = false;
  for (const auto& page : pages) {
    if (page.contains("repo")) {
      const json& r = page["repo"];
      raw.repo_id = r.at("id").get<std::string>();
      raw.created_at = r.at("created_at").get<std::string>();
      if (r.contains("stargazers_count") && !r["stargazers_count"].is_null()) {
        raw.stargazers = r["stargazers_count"].get<long>();
        raw.has_stargazers = true;
      }
      saw_repo = true;
    }
    if (page.contains("prior_authors"))
      for (const auto& a : page["prior_authors"]) raw.prior_authors.push_back(a.get<std::string>());
    if (page.contains("commits"))
      for (const auto& c : page["commits"])
        raw.commits.push_back({c.at("author").get<std::string>(), c.at("date").get<std::string>()});
    if (page.contains("issues"))
      for (const auto& i : page["issues"]) {
        RawIssue is;
        is.created = i.at("created_at").get<std::string>();
        is.closed = i.value("closed_at", "");
        is.first_response = i.value("first_response_at", "");
        is.comments = i.value("comments", 0.0);
        raw.issues.push_back(std::move(is));
      }
    if (page.contains("pulls"))
      for (const auto& p : page["pulls"]) {
        RawPull pr;
        pr.created = p.at("created_at").get<std::string>();
        pr.closed = p.value("closed_at", "");
        pr.first_review = p.value("first_review_at", "");
        pr.merged = p.value("merged", false);
        pr.commits = p.value("commits", 0.0);
        pr.changed_files = p.value("changed_files", 0.0);
        pr.review_comments = p.value("review_comments", 0.0);
        pr.total_comments = p.value("total_comments", 0.0);
        raw.pulls.push_back(std::move(pr));
      }
    if (page.contains("releases"))
      for (const auto& r : page["releases"])
        raw.releases.push_back({r.at("published_at").get<std::string>()});
  }
  if (!saw_repo) throw DataError("raw activity pages are missing the repo header");
  return raw;
}

json repo_to_json(const RepoRecord& r) {
  json j;
  j["repo_id"] = r.meta.repo_id;
  j["label"] = to_string(r.label);
  j["metadata"] = {
      {"repo_id", r.meta.repo_id},
      {"unique_contributors_total", r.meta.unique_contributors_total},
      {"stargazers", r.meta.stargazers},
      {"created_at", r.meta.created_at},
      {"window_start", r.meta.window_start.str()},
      {"window_end", r.meta.window_end.str()},
  };
  json months = json::array();
  for (const auto& m : r.months) {
    json mj;
    for (int i = 0; i < kNumMetrics; ++i) mj[metric_names()[i]] = m.metrics[i];
    months.push_back(std::move(mj));
  }
  j["months"] = std::move(months);
  return j;
}

RepoRecord repo_from_json(const json& j) {
  RepoRecord r;
  r.meta.repo_id = j.at("repo_id").get<std::string>();
  r.label = stage_from_string(j.at("label").get<std::string>());
  const json& md = j.at("metadata");
  r.meta.unique_contributors_total = md.at("unique_contributors_total").get<long>();
  r.meta.stargazers = md.at("stargazers").get<long>();
  r.meta.created_at = md.at("created_at").get<std::string>();
  r.meta.window_start = Month::parse(md.at("window_start").get<std::string>());
  r.meta.window_end = Month::parse(md.at("window_end").get<std::string>());
  const json& months = j.at("months");
  if (months.size() != kWindowMonths)
    throw DataError("repo " + r.meta.repo_id + ": expected 24 months");
  int idx = 0;
  for (const auto& mj : months) {
    MonthlyActivityRecord rec;
    rec.repo_id = r.meta.repo_id;
    rec.month_index = idx++;
    for (int i = 0; i < kNumMetrics; ++i) rec.metrics[i] = mj.at(metric_names()[i]).get<double>();
    r.months.push_back(std::move(rec));
  }
  validate(r);
  return r;
}

void write_corpus_ndjson(const Corpus& corpus, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  for (const auto& r : corpus) f << repo_to_json(r).dump() << '\n';
}

Corpus read_corpus_ndjson(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifactError("missing corpus file: " + path);
  Corpus corpus;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    corpus.push_back(repo_from_json(json::parse(line)));
  }
  return corpus;
}

void write_corpus_csv(const Corpus& corpus, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << "repo_id,month_index";
  for (const auto& n : metric_names()) f << ',' << n;
  f << ",label,unique_contributors_total,stargazers,created_at,window_start,window_end\n";
  std::ostringstream row;
  for (const auto& r : corpus) {
    for (const auto& m : r.months) {
      row.str("");
      row << r.meta.repo_id << ',' << m.month_index;
      for (int i = 0; i < kNumMetrics; ++i) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", m.metrics[i]);
        row << ',' << buf;
      }
      row << ',' << to_string(r.label) << ',' << r.meta.unique_contributors_total << ','
          << r.meta.stargazers << ',' << r.meta.created_at << ',' << r.meta.window_start.str()
          << ',' << r.meta.window_end.str();
      f << row.str() << '\n';
    }
  }
}

}  // namespace stagecast::data
