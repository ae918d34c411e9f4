#include "vcm/experiment.hpp"

#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "vcm/copy_synth.hpp"

namespace vcm {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void rethrow_staged(const std::string &stage)
{
  const std::string tag = "stage '" + stage + "': ";
  try {
    throw;
  } catch (const UsageError &e) {
    throw UsageError(tag + e.what());
  } catch (const NumericalError &e) {
    throw NumericalError(tag + e.what());
  } catch (const DataError &e) {
    throw DataError(tag + e.what());
  } catch (const fs::filesystem_error &e) {
    throw DataError(tag + e.what());
  }
}

template <class F> auto staged(const std::string &name, F &&f)
{
  try {
    return f();
  } catch (...) {
    rethrow_staged(name);
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string hex64(std::uint64_t v)
{
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Absolute paths so manifests from different roots can be merged.
TrialManifest absolutised(const TrialManifest &m)
{
  TrialManifest out{{}, {}};
  for (TrialRecord r : m.records) {
    r.path = fs::absolute(m.resolve(r)).lexically_normal().string();
    out.records.push_back(std::move(r));
  }
  return out;
}

TrialManifest only(const TrialManifest &m, std::initializer_list<Subset> subsets)
{
  TrialManifest out{{}, m.root};
  for (const auto &r : m.records)
    if (std::find(subsets.begin(), subsets.end(), r.subset) != subsets.end())
      out.records.push_back(r);
  return out;
}

struct Inputs
{
  TrialManifest                      all; // absolute paths
  std::map<std::string, std::string> hashes;
};

Inputs load_inputs(const ExperimentConfig &cfg)
{
  Inputs     in;
  const bool any = !cfg.train_manifest.empty() || !cfg.dev_manifest.empty() ||
                   !cfg.eval_manifest.empty();
  if (!any) {
    DeskCorpusConfig dc;
    dc.n_trials = cfg.corpus_trials;
    const fs::path dir = cfg.out_dir / "corpus";
    in.all = absolutised(gen_desk_corpus(dc, cfg.corpus_seed, dir));
    in.hashes["corpus"] = content_hash(dir / "manifest.tsv");
    return in;
  }
  if (cfg.train_manifest.empty() || cfg.dev_manifest.empty() || cfg.eval_manifest.empty())
    throw UsageError("train, dev and eval manifests must be given together");
  const std::pair<const char *, std::pair<fs::path, Subset>> parts[] = {
      {"train", {cfg.train_manifest, Subset::Train}},
      {"dev", {cfg.dev_manifest, Subset::Dev}},
      {"eval", {cfg.eval_manifest, Subset::Eval}}};
  for (const auto &[name, spec] : parts) {
    const TrialManifest m = read_manifest(spec.first);
    in.hashes[name] = content_hash(spec.first);
    in.all = merge(in.all, absolutised(m.filter(spec.second)));
  }
  validate(in.all);
  return in;
}

// Rebuilds the vocoded set unless the stamp shows identical sources and
// channels.
PairedTrialSet vocoded(const TrialManifest &sources, const std::vector<VocoderChannel> &channels,
                       const fs::path &dir, unsigned workers)
{
  std::string key;
  for (const auto &r : sources.records)
    if (r.label == Label::Bonafide)
      key += r.trial_id + '\t' + r.path + '\t' + std::string(to_string(r.subset)) + '\n';
  for (const auto &c : channels)
    key += c.name() + '\n';
  const std::string stamp = hex64(fnv1a64(key));
  const fs::path    manifest_path = dir / "manifest.tsv";
  {
    std::ifstream s(dir / "stamp");
    std::string   old;
    if (s >> old && old == stamp && fs::exists(manifest_path)) {
      spdlog::info("synth: reusing {}", dir.string());
      PairedTrialSet out;
      out.manifest = absolutised(read_manifest(manifest_path));
      out.pairing = build_pairing_index(out.manifest);
      return out;
    }
  }
  const auto     t0 = std::chrono::steady_clock::now();
  PairedTrialSet out = build_vocoded_set(sources, channels, dir, workers);
  write_relative_manifest(manifest_path, out.manifest);
  std::ofstream(dir / "stamp") << stamp << '\n';
  spdlog::info("synth: {} trials into {} in {:.1f} s", out.manifest.records.size(), dir.string(),
               seconds_since(t0));
  return out;
}

void write_csv_rows(const fs::path &path, const std::string &header,
                    const std::vector<std::string> &rows)
{
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write " + path.string());
  out << header << '\n';
  for (const auto &r : rows)
    out << r << '\n';
}

nlohmann::ordered_json config_json(const ExperimentConfig &cfg)
{
  boost::property_tree::ptree pt;
  std::istringstream          in(to_ini(cfg));
  boost::property_tree::read_ini(in, pt);
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto &[section, keys] : pt) {
    auto &s = j[section];
    s = nlohmann::ordered_json::object();
    for (const auto &[k, v] : keys)
      s[k] = v.data();
  }
  return j;
}

nlohmann::ordered_json eer_json(const EerResult &e)
{
  return {{"eer", e.eer}, {"threshold", e.threshold}, {"n_tar", e.n_tar}, {"n_non", e.n_non}};
}

} // namespace

void write_relative_manifest(const fs::path &path, TrialManifest m)
{
  const fs::path base = fs::absolute(path).parent_path();
  for (auto &r : m.records)
    r.path = fs::absolute(m.resolve(r)).lexically_normal().lexically_relative(base).string();
  m.root = base;
  write_manifest(path, m);
}

ExperimentReport run_experiment(const ExperimentConfig &cfg)
{
  validate(cfg);
  const auto t_start = std::chrono::steady_clock::now();
  fs::create_directories(cfg.out_dir);
  ExperimentReport report;

  const Inputs inputs = staged("data", [&] { return load_inputs(cfg); });
  report.manifest_hashes = inputs.hashes;

  std::vector<VocoderChannel> channels, roundtrip;
  for (const auto &c : cfg.channels) {
    channels.push_back(parse_channel(c));
    VocoderChannel rc = channels.back();
    rc.intermediate_sr = cfg.roundtrip_rate;
    roundtrip.push_back(rc);
  }
  const bool need_rt = std::any_of(cfg.systems.begin(), cfg.systems.end(),
                                   [](const SystemSpec &s) { return s.roundtrip; });

  // Spoof rows of real-data manifests ride along with the generated ones.
  const TrialManifest given_spoofs = inputs.all.filter(Label::Spoof);
  const PairedTrialSet native = staged("synth", [&] {
    PairedTrialSet s = vocoded(inputs.all, channels, cfg.out_dir / "vocoded" / "native", cfg.workers);
    s.manifest = merge(s.manifest, given_spoofs);
    s.pairing = build_pairing_index(s.manifest);
    return s;
  });
  report.manifest_hashes["vocoded_native"] = content_hash(cfg.out_dir / "vocoded/native/manifest.tsv");
  PairedTrialSet rt;
  if (need_rt) {
    const std::string dir = "rs" + std::to_string(cfg.roundtrip_rate);
    rt = staged("synth", [&] {
      return vocoded(only(inputs.all, {Subset::Train, Subset::Dev}), roundtrip,
                     cfg.out_dir / "vocoded" / dir, cfg.workers);
    });
    report.manifest_hashes["vocoded_" + dir] =
        content_hash(cfg.out_dir / "vocoded" / dir / "manifest.tsv");
  }

  const TrialManifest eval_set = native.manifest.filter(Subset::Eval);
  if (eval_set.filter(Label::Bonafide).records.empty() || eval_set.filter(Label::Spoof).records.empty())
    throw DataError("stage 'data': eval subset needs both classes");
  const std::string hash = config_hash(cfg);

  std::vector<std::string> run_rows;
  for (const auto seed : cfg.seeds) {
    const auto t_seed = std::chrono::steady_clock::now();
    // (roundtrip, augment) -> (train, dev) features for this seed.
    std::map<std::pair<bool, bool>, std::pair<TrainData, TrainData>> data;
    const AugmentPlan plan = augment_plan(cfg, seed);
    for (const auto &sys : cfg.systems) {
      const auto key = std::make_pair(sys.roundtrip, sys.augment);
      if (data.count(key))
        continue;
      data[key] = staged("features", [&] {
        const TrialManifest &src = sys.roundtrip ? rt.manifest : native.manifest;
        const AugmentPlan   *p = sys.augment ? &plan : nullptr;
        return std::make_pair(
            make_train_data(src.filter(Subset::Train), cfg.train.frontend, p, cfg.train.views, cfg.workers),
            make_train_data(src.filter(Subset::Dev), cfg.train.frontend, p, cfg.train.views, cfg.workers));
      });
    }

    for (const auto &sys : cfg.systems) {
      const auto        t_sys = std::chrono::steady_clock::now();
      const fs::path    dir = cfg.out_dir / "runs" / sys.name / ("seed" + std::to_string(seed));
      const auto       &[tr, dv] = data.at({sys.roundtrip, sys.augment});
      const TrainConfig tc = train_config_for(cfg, sys);
      const TrainResult res = staged("train", [&] { return train(tr, dv, tc, seed); });
      staged("train", [&] {
        fs::create_directories(dir);
        save_checkpoint(dir / "checkpoint.txt", res.best, hash);
        write_history_csv(dir / "history.csv", res.history);
        return 0;
      });

      RunRecord rec;
      rec.system = sys.name;
      rec.seed = seed;
      rec.best_epoch = res.best_epoch;
      rec.epochs = int(res.history.size());
      staged("score", [&] {
        const ScoreSet plain = score_set(eval_set, res.best, "eval");
        const ScoreSet trimmed = score_set(eval_set, res.best, "eval_trim", true);
        write_scores(dir / "scores_eval.txt", plain);
        write_scores(dir / "scores_eval_trim.txt", trimmed);
        rec.eer["eval"] = compute_eer(plain);
        rec.eer["eval_trim"] = compute_eer(trimmed);
        rec.eer["pooled"] = pooled_eer({plain, trimmed});
        rec.groups = group_analysis(plain, tag_grouping(plain));
        write_group_eer_csv(dir / "group_eer.csv", rec.groups);
        write_histogram_csv(dir / "histogram.csv", rec.groups);
        return 0;
      });
      for (const auto &[set, e] : rec.eer)
        run_rows.push_back(sys.name + ',' + std::to_string(seed) + ',' + set + ',' +
                           format_number(e.eer) + ',' + format_number(e.threshold) + ',' +
                           std::to_string(e.n_tar) + ',' + std::to_string(e.n_non) + ',' +
                           std::to_string(rec.best_epoch) + ',' + std::to_string(rec.epochs));
      spdlog::info("seed {} {}: eval EER {:.4f}, pooled {:.4f}, best epoch {}/{} ({:.1f} s)", seed,
                   sys.name, rec.eer["eval"].eer, rec.eer["pooled"].eer, rec.best_epoch,
                   rec.epochs, seconds_since(t_sys));
      report.runs.push_back(std::move(rec));
    }
    spdlog::info("seed {} done in {:.1f} s", seed, seconds_since(t_seed));
  }

  // Seed means and the significance matrix over pooled EERs.
  std::vector<std::string>         mean_rows, group_rows;
  std::map<std::string, EerResult> for_test;
  for (const auto &sys : cfg.systems) {
    std::map<std::string, std::vector<EerResult>>   per_set;
    std::map<std::string, std::vector<double>>      per_group;
    for (const auto &r : report.runs) {
      if (r.system != sys.name)
        continue;
      for (const auto &[set, e] : r.eer)
        per_set[set].push_back(e);
      for (const auto &g : r.groups)
        per_group[g.category].push_back(g.eer.eer);
    }
    for (const auto &[set, v] : per_set) {
      const double m = mean_eer_over_seeds(v);
      report.means[sys.name][set] = m;
      mean_rows.push_back(sys.name + ',' + set + ',' + format_number(m) + ',' +
                          std::to_string(v.size()));
    }
    for (const auto &[cat, v] : per_group) {
      double acc = 0.0;
      for (double x : v)
        acc += x;
      group_rows.push_back(sys.name + ',' + cat + ',' + format_number(acc / double(v.size())));
    }
    EerResult e = per_set.at("pooled").front();
    e.eer = report.means[sys.name]["pooled"];
    for_test[sys.name] = e;
  }
  report.significance = significance_matrix(for_test, cfg.alpha);

  staged("report", [&] {
    write_csv_rows(cfg.out_dir / "runs.csv", "system,seed,set,eer,threshold,n_tar,n_non,best_epoch,epochs",
                   run_rows);
    write_csv_rows(cfg.out_dir / "summary.csv", "system,set,mean_eer,n_seeds", mean_rows);
    write_csv_rows(cfg.out_dir / "group_eer_mean.csv", "system,category,mean_eer", group_rows);
    write_significance_csv(cfg.out_dir / "significance", report.significance);

    nlohmann::ordered_json j;
    j["config"] = config_json(cfg);
    j["config_hash"] = hash;
    j["manifests"] = report.manifest_hashes;
    auto &runs = j["runs"] = nlohmann::ordered_json::array();
    for (const auto &r : report.runs) {
      nlohmann::ordered_json o{{"system", r.system}, {"seed", r.seed},
                               {"best_epoch", r.best_epoch}, {"epochs", r.epochs}};
      for (const auto &[set, e] : r.eer)
        o["eer"][set] = eer_json(e);
      for (const auto &g : r.groups)
        o["groups"][g.category] = eer_json(g.eer);
      runs.push_back(o);
    }
    j["means"] = report.means;
    const auto &sm = report.significance;
    auto       &sig = j["significance"];
    sig["alpha"] = sm.alpha;
    sig["systems"] = sm.systems;
    for (Eigen::Index a = 0; a < sm.p_values.rows(); ++a) {
      std::vector<double> p;
      std::vector<bool>   rej;
      for (Eigen::Index b = 0; b < sm.p_values.cols(); ++b) {
        p.push_back(sm.p_values(a, b));
        rej.push_back(sm.reject(a, b));
      }
      sig["p_values"].push_back(p);
      sig["reject"].push_back(rej);
    }
    std::ofstream out(cfg.out_dir / "report.json");
    if (!out)
      throw DataError("cannot write report.json");
    out << j.dump(2) << '\n';
    return 0;
  });
  spdlog::info("run finished in {:.1f} s", seconds_since(t_start));
  return report;
}

} // namespace vcm
