#include <algorithm>
#include <cmath>
#include <cstdio>

#include "stagecast/data.hpp"
#include "stagecast/errors.hpp"

namespace stagecast::data {

namespace {

// Stage-conditioned monthly base rates, indexed by StageLabel order
// (club, contribMid, federation, toy). The club/federation pair is kept
// deliberately close in overall volume; they differ in newcomer inflow,
// responsiveness, acceptance rate, release cadence, and trend.
struct StageProfile {
  double commit_per_committer;
  double pulls;
  double pr_avg_commits;
  double pr_avg_files;
  double bots;
  double new_contributors;
  double issues;
  double issue_comments_per_issue;
  double issue_duration;
  double issue_ttfr;
  double review_comments_per_pr;
  double review_duration;
  double total_comments_per_pr;
  double pr_ttfr;
  double acceptance;
  double releases;
  double trend;      // relative slope of activity over the window
  double longevity;  // average repo age in years
};

const StageProfile& profile(StageLabel s) {
  static const StageProfile kProfiles[kNumStages] = {
      // club
      {4.0, 32.0, 3.0, 5.0, 2.2, 2.0, 38.0, 2.6, 9.0, 3.0, 1.7, 2.6, 2.7, 1.4, 0.62, 0.55, -0.15,
       5.2},
      // contribMid
      {3.2, 14.0, 2.4, 3.8, 0.9, 2.2, 16.0, 2.2, 14.0, 4.0, 1.3, 3.2, 2.0, 1.8, 0.58, 0.35, 0.3,
       2.8},
      // federation
      {3.6, 48.0, 3.2, 5.6, 3.5, 7.5, 60.0, 3.2, 7.0, 1.3, 2.1, 2.0, 3.3, 0.9, 0.80, 1.6, 0.6,
       6.3},
      // toy
      {2.2, 0.6, 1.4, 2.0, 0.05, 0.15, 0.8, 1.8, 30.0, 9.0, 0.7, 7.0, 1.3, 5.0, 0.35, 0.04, -0.2,
       1.5},
  };
  return kProfiles[int(s)];
}

struct MetadataBounds {
  long contributors;
  long stars;
};

MetadataBounds sample_metadata(StageLabel stage, double margin, Rng& rng) {
  const double m = margin;
  switch (stage) {
    case StageLabel::kToy: {
      const long hi = long(std::floor(6.0 * (1.0 - m) - 1e-9));
      if (hi < 0) throw ConfigError("boundary_margin leaves no feasible toy contributor count");
      const long c = rng.uniform_int(0, hi);
      const long stars = rng.uniform_int(0, 80);
      return {c, stars};
    }
    case StageLabel::kContribMid: {
      const long lo = long(std::ceil(6.0 * (1.0 + m)));
      const long hi = long(std::floor(75.0 * (1.0 - m)));
      if (lo > hi)
        throw ConfigError("boundary_margin pushes the contribMid contributor range past [6,75]");
      const long c = rng.uniform_int(lo, hi);
      const long stars = rng.uniform_int(0, std::min(700L, c * 25));
      return {c, stars};
    }
    case StageLabel::kClub: {
      const long lo = long(std::ceil(75.0 * (1.0 + m)));
      const long c = rng.uniform_int(lo, lo * 3);
      const double ratio = rng.uniform(0.2, 2.0 * (1.0 - m));
      const long stars = long(std::llround(ratio * double(c)));
      return {c, stars};
    }
    case StageLabel::kFederation: {
      const long lo = long(std::ceil(75.0 * (1.0 + m)));
      const long c = rng.uniform_int(lo, lo * 4);
      const double ratio = rng.uniform(2.0 * (1.0 + m) + 0.5, 12.0);
      long stars = long(std::llround(ratio * double(c)));
      const long star_floor = long(std::ceil(1000.0 * (1.0 + m))) + 1;
      if (stars < star_floor) stars = star_floor + rng.uniform_int(0, 800);
      return {c, stars};
    }
  }
  throw ConfigError("unknown stage");
}

std::string synth_created_at(StageLabel stage, Month window_start, Rng& rng) {
  const double years = profile(stage).longevity * rng.uniform(0.6, 1.4);
  const int age_months = std::max(25, int(std::lround(years * 12.0)));
  // The window itself covers 24 months, so creation precedes the window.
  Month created = window_start.plus(-(age_months - kWindowMonths));
  const int day = int(rng.uniform_int(1, 28));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", created.year, created.month, day);
  return buf;
}

double lognoise(double sigma, Rng& rng) {
  if (sigma <= 0.0) return 1.0;
  return std::exp(sigma * rng.normal() - 0.5 * sigma * sigma);
}

RepoRecord synth_repo(StageLabel stage, int index, const SynthesisConfig& cfg) {
  Rng rng(Rng::derive(cfg.seed, uint64_t(int(stage)) * 1000003u + uint64_t(index)));
  const StageProfile& p = profile(stage);

  char idbuf[48];
  std::snprintf(idbuf, sizeof idbuf, "synth-%s-%04d", to_string(stage).c_str(), index);

  RepoRecord repo;
  repo.label = stage;
  repo.meta.repo_id = idbuf;
  repo.meta.window_start = cfg.window_start;
  repo.meta.window_end = cfg.window_start.plus(kWindowMonths - 1);
  const MetadataBounds mb = sample_metadata(stage, cfg.boundary_margin, rng);
  repo.meta.unique_contributors_total = mb.contributors;
  repo.meta.stargazers = mb.stars;
  repo.meta.created_at = synth_created_at(stage, cfg.window_start, rng);
  if (label_stage(repo.meta) != stage)
    throw DataError("synthetic metadata failed its own labeling rule for " + repo.meta.repo_id);

  // Repo-level heterogeneity. The count scale is shared across volume metrics
  // so that absolute activity levels overlap across the club/federation pair.
  const double repo_scale = std::exp(0.35 * rng.normal());
  const double engage = rng.uniform(0.33, 0.52);
  const double trend = p.trend + 0.1 * rng.normal();
  const double sigma = 0.55 * cfg.noise_level;

  repo.months.resize(kWindowMonths);
  for (int t = 0; t < kWindowMonths; ++t) {
    MonthlyActivityRecord& rec = repo.months[t];
    rec.repo_id = repo.meta.repo_id;
    rec.month_index = t;
    const double growth = std::max(0.05, 1.0 + trend * (double(t) / (kWindowMonths - 1) - 0.5));

    const long c_total = repo.meta.unique_contributors_total;
    long committers = std::min<long>(
        c_total,
        std::llround(double(c_total) * engage * growth * lognoise(sigma, rng)));
    if (committers < 0) committers = 0;
    rec.at(Metric::kCommitterCount) = double(committers);

    double commits = 0.0;
    if (committers > 0)
      commits = double(rng.neg_binomial(double(committers) * p.commit_per_committer * growth *
                                            lognoise(sigma, rng),
                                        12.0));
    rec.at(Metric::kCommitCount) = commits;

    long repeat = committers > 0
                      ? std::min<long>(committers,
                                       std::llround(double(committers) * rng.uniform(0.4, 0.75)))
                      : 0;
    rec.at(Metric::kRepeatContributors) = double(repeat);
    long fresh = rng.neg_binomial(p.new_contributors * growth * lognoise(sigma, rng), 8.0);
    rec.at(Metric::kNewContributors) = double(std::min<long>(fresh, committers));
    long bots = rng.neg_binomial(p.bots * lognoise(sigma, rng), 8.0);
    rec.at(Metric::kBotContributors) = double(std::min<long>(bots, committers));
    if (commits > 0 && committers > 0) {
      long bus = std::llround(double(committers) * rng.uniform(0.12, 0.3));
      rec.at(Metric::kBusFactor) = double(std::clamp<long>(bus, 1, committers));
    }

    const long pulls =
        rng.neg_binomial(p.pulls * repo_scale * growth * lognoise(sigma, rng), 10.0);
    rec.at(Metric::kPullRequests) = double(pulls);
    if (pulls > 0) {
      const double avg_commits = rng.gamma(6.0, p.pr_avg_commits / 6.0) * lognoise(sigma, rng);
      const double avg_files = rng.gamma(6.0, p.pr_avg_files / 6.0) * lognoise(sigma, rng);
      rec.at(Metric::kPrAvgCommits) = avg_commits;
      rec.at(Metric::kPrAvgFiles) = avg_files;
      rec.at(Metric::kPrTotalFiles) = double(pulls) * avg_files * rng.uniform(0.85, 1.15);
      rec.at(Metric::kPrReviewComments) =
          double(rng.neg_binomial(double(pulls) * p.review_comments_per_pr * lognoise(sigma, rng),
                                  10.0));
      rec.at(Metric::kPrTotalComments) = double(
          rng.neg_binomial(double(pulls) * p.total_comments_per_pr * lognoise(sigma, rng), 10.0));
      rec.at(Metric::kPrReviewDurationDays) =
          rng.gamma(3.0, p.review_duration / 3.0) * lognoise(sigma, rng);
      rec.at(Metric::kPrTtfrDays) = rng.gamma(3.0, p.pr_ttfr / 3.0) * lognoise(sigma, rng);
      const double kappa = 40.0;
      rec.at(Metric::kPrAcceptanceRate) =
          rng.beta(p.acceptance * kappa, (1.0 - p.acceptance) * kappa);
    }

    const long issues =
        rng.neg_binomial(p.issues * repo_scale * growth * lognoise(sigma, rng), 10.0);
    rec.at(Metric::kIssuesCount) = double(issues);
    if (issues > 0) {
      rec.at(Metric::kIssueComments) = double(rng.neg_binomial(
          double(issues) * p.issue_comments_per_issue * lognoise(sigma, rng), 10.0));
      rec.at(Metric::kIssueDurationDays) =
          rng.gamma(3.0, p.issue_duration / 3.0) * lognoise(sigma, rng);
      rec.at(Metric::kIssueTtfrDays) = rng.gamma(3.0, p.issue_ttfr / 3.0) * lognoise(sigma, rng);
    }

    rec.at(Metric::kReleases) =
        double(rng.neg_binomial(p.releases * growth * lognoise(sigma, rng), 6.0));
  }

  validate(repo);
  return repo;
}

}  // namespace

Corpus generate_synthetic_corpus(const SynthesisConfig& cfg) {
  if (cfg.noise_level < 0.0 || cfg.noise_level > 1.0)
    throw ConfigError("noise_level must be in [0,1]");
  if (cfg.boundary_margin <= 0.0 || cfg.boundary_margin >= 1.0)
    throw ConfigError("boundary_margin must be in (0,1)");
  for (int s = 0; s < kNumStages; ++s)
    if (cfg.per_stage[s] < 0) throw ConfigError("per-stage repo counts must be non-negative");

  Corpus corpus;
  for (int s = 0; s < kNumStages; ++s) {
    for (int i = 0; i < cfg.per_stage[s]; ++i)
      corpus.push_back(synth_repo(StageLabel(s), i, cfg));
  }
  return corpus;
}

}  // namespace stagecast::data
