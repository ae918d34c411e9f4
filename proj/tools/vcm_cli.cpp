// vcm: command-line front end for the vocoded-spoof countermeasure toolkit.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "vcm/copy_synth.hpp"
#include "vcm/experiment.hpp"

namespace fs = std::filesystem;
using namespace vcm;

namespace {

struct Common
{
  std::optional<std::uint64_t> seed;
  std::string                  config;
  std::string                  out;
};

void add_common(CLI::App *cmd, Common &c)
{
  cmd->add_option("--seed", c.seed, "Master seed");
  cmd->add_option("--config", c.config, "INI experiment config");
  cmd->add_option("--out", c.out, "Output directory (relative paths honour VCM_OUT_ROOT)");
}

// --out, else the config's out dir; relative results go under VCM_OUT_ROOT.
fs::path out_dir(const Common &c, const ExperimentConfig &cfg)
{
  fs::path p = c.out.empty() ? cfg.out_dir : fs::path(c.out);
  if (p.is_relative())
    if (const char *root = std::getenv("VCM_OUT_ROOT"); root && *root)
      p = fs::path(root) / p;
  return p;
}

ExperimentConfig load(const Common &c)
{
  ExperimentConfig cfg = load_experiment_config_or_default(c.config);
  if (c.seed)
    cfg.seeds = {*c.seed};
  return cfg;
}

std::uint64_t seed_of(const Common &c, const ExperimentConfig &cfg)
{
  return c.seed ? *c.seed : cfg.seeds.front();
}

TrialManifest subset_or_all(const TrialManifest &m, const std::string &subset)
{
  return subset == "all" ? m : m.filter(parse_subset(subset));
}

void write_eer_csv(const fs::path &path, const std::vector<std::pair<std::string, EerResult>> &rows)
{
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write " + path.string());
  out << "set,eer,threshold,n_tar,n_non\n";
  for (const auto &[name, e] : rows)
    out << name << ',' << format_number(e.eer) << ',' << format_number(e.threshold) << ','
        << e.n_tar << ',' << e.n_non << '\n';
}

// "name=path" or a bare path named by its stem.
std::pair<std::string, fs::path> named_path(const std::string &arg)
{
  const auto eq = arg.find('=');
  if (eq == std::string::npos)
    return {fs::path(arg).stem().string(), arg};
  if (eq == 0 || eq + 1 == arg.size())
    throw UsageError("expected NAME=PATH, got '" + arg + "'");
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Vocoded-spoof countermeasure toolkit"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors");

  // gen-corpus
  Common gc;
  int    n_trials = 0;
  auto  *gen = app.add_subcommand("gen-corpus", "Generate the synthetic bona fide corpus");
  add_common(gen, gc);
  gen->add_option("--trials", n_trials, "Number of trials (default: config corpus_trials)");

  // synth
  Common      sc;
  std::string synth_manifest, synth_channels;
  int         synth_rate = 0;
  auto       *synth = app.add_subcommand("synth", "Build the vocoded set from bona fide trials");
  add_common(synth, sc);
  synth->add_option("--manifest", synth_manifest, "Bona fide manifest")->required();
  synth->add_option("--channels", synth_channels, "Comma list (default: config channels)");
  synth->add_option("--roundtrip-rate", synth_rate, "Resample through this rate inside each channel");

  // train
  Common      tc;
  std::string train_manifest, train_system = "cf_paired";
  auto       *trn = app.add_subcommand("train", "Train one system on the train/dev subsets");
  add_common(trn, tc);
  trn->add_option("--manifest", train_manifest, "Manifest with bona fide and spoofed train/dev rows")
      ->required();
  trn->add_option("--system", train_system, "System name (built-in or [system:NAME])");

  // score
  Common      scc;
  std::string score_manifest, score_ckpt, score_subset = "eval", score_name = "scores";
  bool        score_trim = false;
  auto       *score = app.add_subcommand("score", "Score trials with a checkpoint");
  add_common(score, scc);
  score->add_option("--manifest", score_manifest, "Trials to score")->required();
  score->add_option("--checkpoint", score_ckpt, "Model checkpoint")->required();
  score->add_option("--subset", score_subset, "train, dev, eval or all");
  score->add_option("--name", score_name, "Output stem");
  score->add_flag("--trim", score_trim, "Trim non-speech edges before scoring");

  // eer
  Common                   ec;
  std::vector<std::string> eer_scores;
  std::string              eer_manifest;
  auto                    *eer = app.add_subcommand("eer", "EER per score file, pooled when several");
  add_common(eer, ec);
  eer->add_option("--scores", eer_scores, "Score files, NAME=PATH or PATH")->required();
  eer->add_option("--manifest", eer_manifest, "Manifest holding the labels")->required();

  // group-report
  Common      grc;
  std::string gr_scores, gr_manifest;
  int         gr_bins = 64;
  auto       *group = app.add_subcommand("group-report", "Per-channel EER and score histograms");
  add_common(group, grc);
  group->add_option("--scores", gr_scores, "Score file")->required();
  group->add_option("--manifest", gr_manifest, "Manifest holding labels and tags")->required();
  group->add_option("--bins", gr_bins, "Histogram bins")->check(CLI::PositiveNumber);

  // sigtest
  Common                   stc;
  std::vector<std::string> st_systems;
  std::string              st_manifest;
  double                   st_alpha = 0.0;
  auto *sig = app.add_subcommand("sigtest", "Pairwise EER tests with Holm correction");
  add_common(sig, stc);
  sig->add_option("--system", st_systems, "NAME=SCORES, repeat for each system")->required();
  sig->add_option("--manifest", st_manifest, "Manifest holding the labels")->required();
  sig->add_option("--alpha", st_alpha, "Family-wise level (default: config alpha)");

  // run
  Common rc;
  int    run_trials = 0;
  auto  *run = app.add_subcommand("run", "Full experiment: corpus, synthesis, training, scoring, report");
  add_common(run, rc);
  run->add_option("--trials", run_trials, "Override corpus_trials");
  run->add_flag("--print-config", "Print the resolved config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : int(ErrorKind::Usage);
  }
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*gen) {
      ExperimentConfig cfg = load(gc);
      DeskCorpusConfig dc;
      dc.n_trials = n_trials > 0 ? n_trials : cfg.corpus_trials;
      if (dc.n_trials < 20)
        throw UsageError("gen-corpus: at least 20 trials");
      const fs::path dir = out_dir(gc, cfg);
      const auto     m = gen_desk_corpus(dc, gc.seed ? *gc.seed : cfg.corpus_seed, dir);
      std::cout << (dir / "manifest.tsv").string() << '\t' << m.records.size() << " trials\n";
    } else if (*synth) {
      ExperimentConfig cfg = load(sc);
      auto channels = synth_channels.empty() ? std::vector<VocoderChannel>{}
                                             : parse_channels(synth_channels);
      if (channels.empty())
        for (const auto &c : cfg.channels)
          channels.push_back(parse_channel(c));
      if (synth_rate > 0)
        for (auto &c : channels)
          c.intermediate_sr = synth_rate;
      const fs::path dir = out_dir(sc, cfg);
      const auto     src = read_manifest(synth_manifest);
      validate(src);
      const auto set = build_vocoded_set(src, channels, dir, cfg.workers);
      write_relative_manifest(dir / "manifest.tsv", set.manifest);
      std::cout << (dir / "manifest.tsv").string() << '\t' << set.manifest.records.size()
                << " trials\n";
    } else if (*trn) {
      ExperimentConfig cfg = load(tc);
      const auto       it = std::find_if(cfg.systems.begin(), cfg.systems.end(),
                                         [&](const SystemSpec &s) { return s.name == train_system; });
      const SystemSpec sys = it != cfg.systems.end() ? *it : builtin_system(train_system);
      const TrainConfig t = train_config_for(cfg, sys);
      validate(t);
      const std::uint64_t seed = seed_of(tc, cfg);
      const auto          m = read_manifest(train_manifest);
      validate(m);
      const AugmentPlan plan = augment_plan(cfg, seed);
      const AugmentPlan *p = sys.augment ? &plan : nullptr;
      const TrainData tr = make_train_data(m.filter(Subset::Train), t.frontend, p, t.views, cfg.workers);
      const TrainData dv = make_train_data(m.filter(Subset::Dev), t.frontend, p, t.views, cfg.workers);
      const TrainResult res = train(tr, dv, t, seed);
      const fs::path dir = out_dir(tc, cfg);
      fs::create_directories(dir);
      save_checkpoint(dir / "checkpoint.txt", res.best, config_hash(cfg));
      write_history_csv(dir / "history.csv", res.history);
      std::cout << (dir / "checkpoint.txt").string() << "\tbest epoch " << res.best_epoch << " of "
                << res.history.size() << '\n';
    } else if (*score) {
      ExperimentConfig cfg = load(scc);
      const auto       p = load_checkpoint(score_ckpt);
      const auto       m = subset_or_all(read_manifest(score_manifest), score_subset);
      const ScoreSet   s = score_set(m, p, score_name, score_trim);
      const fs::path   dir = out_dir(scc, cfg);
      fs::create_directories(dir);
      write_scores(dir / (score_name + ".txt"), s);
      if (!s.missing.empty())
        spdlog::warn("score: {} trials could not be scored", s.missing.size());
      std::cout << (dir / (score_name + ".txt")).string() << '\t' << s.entries.size()
                << " scores\n";
    } else if (*eer) {
      ExperimentConfig                                  cfg = load(ec);
      const auto                                        labels = read_manifest(eer_manifest);
      std::vector<ScoreSet>                             sets;
      std::vector<std::pair<std::string, EerResult>>    rows;
      for (const auto &arg : eer_scores) {
        const auto [name, path] = named_path(arg);
        sets.push_back(read_scores(path, labels, name));
        rows.emplace_back(name, compute_eer(sets.back()));
      }
      if (sets.size() > 1)
        rows.emplace_back("pooled", pooled_eer(sets));
      const fs::path dir = out_dir(ec, cfg);
      fs::create_directories(dir);
      write_eer_csv(dir / "eer.csv", rows);
      for (const auto &[name, e] : rows)
        std::cout << name << "\tEER " << format_number(e.eer) << "\tthreshold "
                  << format_number(e.threshold) << '\n';
    } else if (*group) {
      ExperimentConfig cfg = load(grc);
      const ScoreSet   s = read_scores(gr_scores, read_manifest(gr_manifest), "eval");
      const auto       g = group_analysis(s, tag_grouping(s), gr_bins);
      const fs::path   dir = out_dir(grc, cfg);
      fs::create_directories(dir);
      write_group_eer_csv(dir / "group_eer.csv", g);
      write_histogram_csv(dir / "histogram.csv", g);
      for (const auto &r : g)
        std::cout << r.category << "\tEER " << format_number(r.eer.eer) << '\n';
    } else if (*sig) {
      ExperimentConfig                 cfg = load(stc);
      const auto                       labels = read_manifest(st_manifest);
      std::map<std::string, EerResult> results;
      for (const auto &arg : st_systems) {
        const auto [name, path] = named_path(arg);
        if (results.count(name))
          throw UsageError("sigtest: system '" + name + "' given twice");
        results[name] = compute_eer(read_scores(path, labels, name));
      }
      const double alpha = st_alpha > 0.0 ? st_alpha : cfg.alpha;
      if (!(alpha < 1.0))
        throw UsageError("sigtest: alpha must lie in (0, 1)");
      const auto     sm = significance_matrix(results, alpha);
      const fs::path dir = out_dir(stc, cfg);
      fs::create_directories(dir);
      write_significance_csv(dir / "significance", sm);
      for (Eigen::Index a = 0; a < sm.p_values.rows(); ++a)
        for (Eigen::Index b = a + 1; b < sm.p_values.cols(); ++b)
          std::cout << sm.systems[std::size_t(a)] << " vs " << sm.systems[std::size_t(b)] << "\tp "
                    << format_number(sm.p_values(a, b)) << (sm.reject(a, b) ? "\treject" : "")
                    << '\n';
    } else if (*run) {
      ExperimentConfig cfg = load(rc);
      if (run_trials > 0)
        cfg.corpus_trials = run_trials;
      cfg.out_dir = out_dir(rc, cfg);
      validate(cfg);
      if (run->count("--print-config")) {
        std::cout << to_ini(cfg);
        return 0;
      }
      const auto report = run_experiment(cfg);
      for (const auto &[sys, sets] : report.means)
        for (const auto &[set, m] : sets)
          std::cout << sys << '\t' << set << "\tmean EER " << format_number(m) << '\n';
    }
  } catch (const Error &e) {
    spdlog::error("{}", e.what());
    return int(e.kind());
  } catch (const fs::filesystem_error &e) {
    spdlog::error("{}", e.what());
    return int(ErrorKind::Data);
  } catch (const std::exception &e) {
    spdlog::error("{}", e.what());
    return int(ErrorKind::Data);
  }
  return 0;
}
