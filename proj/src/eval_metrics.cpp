#include "vcm/eval_metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <spdlog/spdlog.h>

namespace vcm {

EerResult compute_eer(const std::vector<double> &bona, const std::vector<double> &spoof)
{
  if (bona.empty() || spoof.empty())
    throw DataError("compute_eer: need at least one trial of each class (bona " +
                    std::to_string(bona.size()) + ", spoof " + std::to_string(spoof.size()) +
                    ")");
  for (double v : bona)
    if (!std::isfinite(v))
      throw NumericalError("compute_eer: non-finite bona fide score");
  for (double v : spoof)
    if (!std::isfinite(v))
      throw NumericalError("compute_eer: non-finite spoof score");

  std::vector<double> b = bona, s = spoof;
  std::sort(b.begin(), b.end());
  std::sort(s.begin(), s.end());
  std::vector<double> t;
  t.reserve(b.size() + s.size() + 1);
  std::merge(b.begin(), b.end(), s.begin(), s.end(), std::back_inserter(t));
  t.erase(std::unique(t.begin(), t.end()), t.end());
  t.push_back(std::numeric_limits<double>::infinity());

  const double nb = double(b.size()), ns = double(s.size());
  std::size_t  below_b = 0, below_s = 0; // counts strictly below t
  double       prev_frr = 0.0, prev_far = 0.0, prev_t = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    while (below_b < b.size() && b[below_b] < t[k])
      ++below_b;
    while (below_s < s.size() && s[below_s] < t[k])
      ++below_s;
    const double frr = double(below_b) / nb;
    const double far = double(s.size() - below_s) / ns;
    const double d = frr - far;
    if (d >= 0.0) {
      EerResult r;
      r.n_tar = b.size();
      r.n_non = s.size();
      if (d == 0.0 || k == 0) {
        r.eer = frr;
        r.threshold = std::isfinite(t[k]) ? t[k] : prev_t;
      } else {
        const double d_prev = prev_frr - prev_far;
        const double alpha = -d_prev / (d - d_prev);
        r.eer = prev_frr + alpha * (frr - prev_frr);
        r.threshold = std::isfinite(t[k]) ? prev_t + alpha * (t[k] - prev_t) : prev_t;
      }
      return r;
    }
    prev_frr = frr;
    prev_far = far;
    prev_t = t[k];
  }
  throw NumericalError("compute_eer: no crossing found"); // unreachable: d(+inf) = 1
}

EerResult compute_eer(const ScoreSet &s)
{
  std::vector<double> bona, spoof;
  for (const auto &e : s.entries)
    (e.label == Label::Bonafide ? bona : spoof).push_back(e.score);
  return compute_eer(bona, spoof);
}

EerResult pooled_eer(const std::vector<ScoreSet> &sets)
{
  ScoreSet all;
  for (const auto &s : sets)
    all.entries.insert(all.entries.end(), s.entries.begin(), s.entries.end());
  return compute_eer(all);
}

double mean_eer_over_seeds(const std::vector<EerResult> &runs)
{
  if (runs.empty())
    throw UsageError("mean_eer_over_seeds: no runs");
  double acc = 0.0;
  for (const auto &r : runs)
    acc += r.eer;
  return acc / double(runs.size());
}

Grouping tag_grouping(const ScoreSet &s)
{
  Grouping g;
  for (const auto &e : s.entries)
    if (e.label == Label::Spoof)
      g[e.attack_tag] = e.attack_tag;
  return g;
}

std::vector<GroupResult> group_analysis(const ScoreSet &s, const Grouping &grouping, int bins)
{
  if (bins < 1)
    throw UsageError("group_analysis: bins must be positive");
  if (s.entries.empty())
    throw DataError("group_analysis: empty score set");

  std::vector<double>                              bona;
  std::map<std::string, std::vector<double>>       spoof_by_cat;
  std::set<std::string>                            declared;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto &[tag, cat] : grouping)
    declared.insert(cat);
  for (const auto &e : s.entries) {
    lo = std::min(lo, e.score);
    hi = std::max(hi, e.score);
    if (e.label == Label::Bonafide) {
      bona.push_back(e.score);
    } else {
      const auto it = grouping.find(e.attack_tag);
      spoof_by_cat[it == grouping.end() ? "other" : it->second].push_back(e.score);
    }
  }
  for (const auto &cat : declared)
    if (!spoof_by_cat.count(cat))
      spdlog::warn("group_analysis: category '{}' has no spoofed trials, omitted", cat);

  auto bin_of = [&](double v) {
    if (!(hi > lo))
      return 0;
    const int k = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    return std::clamp(k, 0, bins - 1);
  };

  std::vector<GroupResult> out;
  for (const auto &[cat, scores] : spoof_by_cat) {
    GroupResult g;
    g.category = cat;
    g.eer = compute_eer(bona, scores);
    g.histogram.lo = lo;
    g.histogram.hi = hi;
    g.histogram.bona.assign(std::size_t(bins), 0);
    g.histogram.spoof.assign(std::size_t(bins), 0);
    for (double v : bona)
      ++g.histogram.bona[std::size_t(bin_of(v))];
    for (double v : scores)
      ++g.histogram.spoof[std::size_t(bin_of(v))];
    out.push_back(std::move(g));
  }
  return out;
}

std::string format_number(double v)
{
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_scores(const std::filesystem::path &path, const ScoreSet &s)
{
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write scores " + path.string());
  for (const auto &e : s.entries)
    out << e.trial_id << '\t' << format_number(e.score) << '\n';
}

ScoreSet read_scores(const std::filesystem::path &path, const TrialManifest &labels,
                     const std::string &set_name)
{
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open scores " + path.string());
  std::unordered_map<std::string, const TrialRecord *> by_id;
  for (const auto &r : labels.records)
    by_id.emplace(r.trial_id, &r);

  ScoreSet              s;
  s.name = set_name;
  std::set<std::string> seen;
  std::string           line;
  std::size_t           lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty() || line.starts_with('#'))
      continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>score");
    const std::string id = line.substr(0, tab);
    double            v = 0.0;
    const char       *first = line.data() + tab + 1, *last = line.data() + line.size();
    const auto        res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad score");
    const auto it = by_id.find(id);
    if (it == by_id.end())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": unknown trial '" + id +
                      "'");
    if (!seen.insert(id).second)
      throw DataError(path.string() + ": duplicate trial '" + id + "'");
    s.entries.push_back({id, v, it->second->label, it->second->attack_tag, set_name});
  }
  return s;
}

void write_group_eer_csv(const std::filesystem::path &path, const std::vector<GroupResult> &g)
{
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write " + path.string());
  out << "category,eer,threshold,n_tar,n_non\n";
  for (const auto &r : g)
    out << r.category << ',' << format_number(r.eer.eer) << ',' << format_number(r.eer.threshold)
        << ',' << r.eer.n_tar << ',' << r.eer.n_non << '\n';
}

void write_histogram_csv(const std::filesystem::path &path, const std::vector<GroupResult> &g)
{
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write " + path.string());
  out << "category,bin,lo,hi,bona,spoof\n";
  for (const auto &r : g) {
    const auto   n = r.histogram.bona.size();
    const double w = (r.histogram.hi - r.histogram.lo) / double(n);
    for (std::size_t k = 0; k < n; ++k)
      out << r.category << ',' << k << ',' << format_number(r.histogram.lo + w * double(k)) << ','
          << format_number(r.histogram.lo + w * double(k + 1)) << ',' << r.histogram.bona[k] << ','
          << r.histogram.spoof[k] << '\n';
  }
}

} // namespace vcm
