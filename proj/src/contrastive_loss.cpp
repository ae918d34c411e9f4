#include "vcm/contrastive_loss.hpp"

#include <algorithm>

namespace vcm {

std::string_view to_string(CfLevels l)
{
  switch (l) {
  case CfLevels::Sequence:
    return "sequence";
  case CfLevels::Utterance:
    return "utterance";
  case CfLevels::Both:
    return "both";
  }
  return "?";
}

CfLevels parse_cf_levels(std::string_view s)
{
  if (s == "sequence")
    return CfLevels::Sequence;
  if (s == "utterance")
    return CfLevels::Utterance;
  if (s == "both")
    return CfLevels::Both;
  throw UsageError("unknown cf levels '" + std::string(s) + "'");
}

std::string_view to_string(Pairing p) { return p == Pairing::Paired ? "paired" : "random"; }

Pairing parse_pairing(std::string_view s)
{
  if (s == "paired")
    return Pairing::Paired;
  if (s == "random")
    return Pairing::Random;
  throw UsageError("unknown pairing '" + std::string(s) + "'");
}

BatchPlan compose_batch(const std::string &bona_id, const PairingIndex &pairing,
                        const std::vector<std::string> &pool, int s, int k, Pairing mode,
                        std::mt19937_64 &rng)
{
  if (s < 1)
    throw UsageError("compose_batch: S must be at least 1");
  if (k < 1)
    throw UsageError("compose_batch: K = 0 leaves one bona fide member, the loss needs two");

  std::vector<std::string> chosen;
  if (mode == Pairing::Paired) {
    const auto it = pairing.find(bona_id);
    if (it == pairing.end() || it->second.size() < std::size_t(s))
      throw DataError("compose_batch: '" + bona_id + "' has fewer than " + std::to_string(s) +
                      " paired spoofed trials");
    chosen = it->second;
    if (chosen.size() > std::size_t(s)) {
      std::vector<std::string> sample;
      std::sample(chosen.begin(), chosen.end(), std::back_inserter(sample), s, rng);
      chosen = std::move(sample);
    }
  } else {
    if (pool.size() < std::size_t(s))
      throw DataError("compose_batch: spoofed pool smaller than S");
    std::sample(pool.begin(), pool.end(), std::back_inserter(chosen), s, rng);
  }

  BatchPlan plan;
  for (int v = 0; v <= k; ++v)
    plan.bona.push_back({bona_id, v});
  for (int v = 0; v <= k; ++v)
    for (const auto &id : chosen)
      plan.spoof.push_back({id, v});
  return plan;
}

} // namespace vcm
