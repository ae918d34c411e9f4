#include "vcm/manifest.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace vcm {

std::string_view to_string(Label l) { return l == Label::Bonafide ? "bonafide" : "spoof"; }

std::string_view to_string(Subset s)
{
  switch (s) {
  case Subset::Train:
    return "train";
  case Subset::Dev:
    return "dev";
  case Subset::Eval:
    return "eval";
  }
  return "?";
}

Label parse_label(std::string_view s)
{
  if (s == "bonafide")
    return Label::Bonafide;
  if (s == "spoof")
    return Label::Spoof;
  throw DataError("manifest: unknown label '" + std::string(s) + "'");
}

Subset parse_subset(std::string_view s)
{
  if (s == "train")
    return Subset::Train;
  if (s == "dev")
    return Subset::Dev;
  if (s == "eval")
    return Subset::Eval;
  throw DataError("manifest: unknown subset '" + std::string(s) + "'");
}

std::filesystem::path TrialManifest::resolve(const TrialRecord &r) const
{
  const std::filesystem::path p(r.path);
  return p.is_absolute() ? p : root / p;
}

TrialManifest TrialManifest::filter(Subset s) const
{
  TrialManifest out{{}, root};
  std::copy_if(records.begin(), records.end(), std::back_inserter(out.records),
               [s](const TrialRecord &r) { return r.subset == s; });
  return out;
}

TrialManifest TrialManifest::filter(Label l) const
{
  TrialManifest out{{}, root};
  std::copy_if(records.begin(), records.end(), std::back_inserter(out.records),
               [l](const TrialRecord &r) { return r.label == l; });
  return out;
}

const TrialRecord *TrialManifest::find(std::string_view trial_id) const
{
  for (const auto &r : records)
    if (r.trial_id == trial_id)
      return &r;
  return nullptr;
}

void validate(const TrialManifest &m)
{
  std::set<std::string_view> ids;
  for (const auto &r : m.records) {
    if (r.trial_id.empty())
      throw DataError("manifest: empty trial id");
    if (!ids.insert(r.trial_id).second)
      throw DataError("manifest: duplicate trial id '" + r.trial_id + "'");
    if (r.label == Label::Spoof && (r.source_id == r.trial_id || r.attack_tag == "-"))
      throw DataError("manifest: spoof trial '" + r.trial_id +
                      "' needs a distinct source_id and an attack tag");
  }
}

TrialManifest read_manifest(const std::filesystem::path &path)
{
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open manifest " + path.string());
  TrialManifest m;
  m.root = std::filesystem::absolute(path).parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty() || line.starts_with("trial_id\t") || line.starts_with('#'))
      continue;
    std::vector<std::string> cols;
    std::stringstream        ss(line);
    std::string              col;
    while (std::getline(ss, col, '\t'))
      cols.push_back(col);
    if (cols.size() != 6)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 6 columns");
    m.records.push_back({cols[0], cols[1], parse_label(cols[2]), cols[3], cols[4],
                         parse_subset(cols[5])});
  }
  validate(m);
  return m;
}

void write_manifest(const std::filesystem::path &path, const TrialManifest &m)
{
  validate(m);
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write manifest " + path.string());
  const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  out << "trial_id\tpath\tlabel\tattack_tag\tsource_id\tsubset\n";
  for (const auto &r : m.records) {
    // Paths are stored relative to the manifest file when possible.
    std::filesystem::path p = m.resolve(r);
    const auto            rel = std::filesystem::proximate(p, dir);
    out << r.trial_id << '\t' << rel.generic_string() << '\t' << to_string(r.label) << '\t'
        << r.attack_tag << '\t' << r.source_id << '\t' << to_string(r.subset) << '\n';
  }
}

std::string content_hash(const std::filesystem::path &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char              buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

PairingIndex build_pairing_index(const TrialManifest &m)
{
  PairingIndex index;
  for (const auto &r : m.records)
    if (r.label == Label::Bonafide)
      index[r.trial_id];
  for (const auto &r : m.records) {
    if (r.label != Label::Spoof)
      continue;
    auto it = index.find(r.source_id);
    if (it == index.end())
      throw DataError("manifest: spoof '" + r.trial_id + "' names unknown source '" +
                      r.source_id + "'");
    it->second.push_back(r.trial_id);
  }
  for (auto &[id, spoofs] : index)
    std::sort(spoofs.begin(), spoofs.end());
  return index;
}

TrialManifest merge(const TrialManifest &a, const TrialManifest &b)
{
  TrialManifest out{a.records, a.root};
  for (TrialRecord r : b.records) {
    r.path = std::filesystem::absolute(b.resolve(r)).string();
    out.records.push_back(std::move(r));
  }
  validate(out);
  return out;
}

} // namespace vcm
