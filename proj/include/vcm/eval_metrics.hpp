#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vcm/manifest.hpp"

namespace vcm {

struct ScoreEntry
{
  std::string trial_id;
  double      score = 0.0;
  Label       label = Label::Bonafide;
  std::string attack_tag = "-";
  std::string set_name;
};

struct ScoreSet
{
  std::string             name;
  std::vector<ScoreEntry> entries;
  /// Trials that could not be scored (unreadable audio and the like).
  std::vector<std::string> missing;
};

struct EerResult
{
  double      eer = 0.0;
  double      threshold = 0.0;
  std::size_t n_tar = 0; // bona fide
  std::size_t n_non = 0; // spoofed
};

/// FRR(t) = P(bona < t), FAR(t) = P(spoof >= t) over t in the sorted unique
/// scores followed by +inf. The EER is taken at the first t with
/// FRR - FAR >= 0, interpolated linearly from the previous operating point
/// unless the difference is exactly zero there. The threshold is reported
/// the same way (the last finite score when the crossing is at +inf).
EerResult compute_eer(const std::vector<double> &bona, const std::vector<double> &spoof);
EerResult compute_eer(const ScoreSet &s);

EerResult pooled_eer(const std::vector<ScoreSet> &sets);
double    mean_eer_over_seeds(const std::vector<EerResult> &runs);

struct Histogram
{
  double                   lo = 0.0;
  double                   hi = 0.0;
  std::vector<std::size_t> bona;
  std::vector<std::size_t> spoof;
};

struct GroupResult
{
  std::string category;
  EerResult   eer;
  Histogram   histogram;
};

using Grouping = std::map<std::string, std::string>; // attack tag -> category

/// Per category: all bona fide trials against the category's spoofed trials.
/// Histograms share `bins` bins spanning the whole set's score range.
/// Tags absent from `grouping` fall into "other"; categories without spoofed
/// trials are dropped with a warning.
std::vector<GroupResult> group_analysis(const ScoreSet &s, const Grouping &grouping, int bins = 64);

/// Identity grouping over every tag in the set.
Grouping tag_grouping(const ScoreSet &s);

// Score files: "trial_id<TAB>score" per line.
void     write_scores(const std::filesystem::path &path, const ScoreSet &s);
ScoreSet read_scores(const std::filesystem::path &path, const TrialManifest &labels,
                     const std::string &set_name);

/// CSV: category,eer,threshold,n_tar,n_non
void write_group_eer_csv(const std::filesystem::path &path, const std::vector<GroupResult> &g);
/// CSV: category,bin,lo,hi,bona,spoof
void write_histogram_csv(const std::filesystem::path &path, const std::vector<GroupResult> &g);

/// Shortest round-trip decimal form; used for every number in CSV output.
std::string format_number(double v);

} // namespace vcm
