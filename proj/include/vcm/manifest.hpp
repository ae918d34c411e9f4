#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vcm/common.hpp"

namespace vcm {

enum class Label { Bonafide, Spoof };
enum class Subset { Train, Dev, Eval };

std::string_view to_string(Label l);
std::string_view to_string(Subset s);
Label            parse_label(std::string_view s);
Subset           parse_subset(std::string_view s);

struct TrialRecord
{
  std::string trial_id;
  std::string path;       // relative paths resolve against the manifest root
  Label       label = Label::Bonafide;
  std::string attack_tag = "-";
  std::string source_id;  // self for bona fide trials
  Subset      subset = Subset::Train;

  bool operator==(const TrialRecord &) const = default;
};

/// Rows of a TSV protocol file:
///   trial_id  path  label  attack_tag  source_id  subset
struct TrialManifest
{
  std::vector<TrialRecord> records;
  std::filesystem::path    root;

  std::filesystem::path resolve(const TrialRecord &r) const;
  TrialManifest         filter(Subset s) const;
  TrialManifest         filter(Label l) const;
  const TrialRecord    *find(std::string_view trial_id) const;
};

/// Unique ids, spoof rows point at a different source and carry a tag.
void validate(const TrialManifest &m);

TrialManifest read_manifest(const std::filesystem::path &path);
void          write_manifest(const std::filesystem::path &path, const TrialManifest &m);
/// FNV-1a of the file contents, as 16 hex digits.
std::string content_hash(const std::filesystem::path &path);

/// Bona fide id -> ids of its spoofed derivatives, sorted.
using PairingIndex = std::map<std::string, std::vector<std::string>>;

struct PairedTrialSet
{
  TrialManifest manifest;
  PairingIndex  pairing;
};

/// Builds the pairing index from source_id columns. Throws DataError when a
/// spoof row names a source that is not a bona fide row of the manifest.
PairingIndex  build_pairing_index(const TrialManifest &m);
TrialManifest merge(const TrialManifest &a, const TrialManifest &b);

} // namespace vcm
