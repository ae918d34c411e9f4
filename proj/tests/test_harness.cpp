#include <doctest.h>

#include <fstream>
#include <set>

#include "test_support.hpp"
#include "vcm/copy_synth.hpp"
#include "vcm/experiment.hpp"

using namespace vcm;
namespace fs = std::filesystem;
using vcm::test::sine;

namespace {

fs::path scratch(const std::string &name)
{
  const fs::path p = fs::temp_directory_path() / ("vcm_test_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path &p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("desk corpus layout and regeneration")
{
  const fs::path   a = scratch("corpus_a"), b = scratch("corpus_b");
  DeskCorpusConfig cfg;
  cfg.n_trials = 25;
  const TrialManifest m = gen_desk_corpus(cfg, 11, a);
  REQUIRE(m.records.size() == 25);
  CHECK(m.filter(Subset::Train).records.size() == 15);
  CHECK(m.filter(Subset::Dev).records.size() == 5);
  CHECK(m.filter(Subset::Eval).records.size() == 5);
  CHECK(m.filter(Label::Spoof).records.empty());
  validate(m);

  const TrialManifest again = read_manifest(a / "manifest.tsv");
  CHECK(again.records == m.records);

  gen_desk_corpus(cfg, 11, b);
  CHECK(slurp(a / "manifest.tsv") == slurp(b / "manifest.tsv"));
  for (const auto &r : m.records)
    CHECK(slurp(a / r.path) == slurp(b / r.path));

  const fs::path c = scratch("corpus_c");
  gen_desk_corpus(cfg, 12, c);
  CHECK(slurp(a / m.records[0].path) != slurp(c / m.records[0].path));
}

TEST_CASE("desk corpus split for 200 trials")
{
  // Split arithmetic only; audio for 200 trials is exercised by the run.
  const fs::path   dir = scratch("corpus_200");
  DeskCorpusConfig cfg;
  cfg.n_trials = 200;
  cfg.min_duration = cfg.max_duration = 0.05;
  const TrialManifest m = gen_desk_corpus(cfg, 1, dir);
  CHECK(m.records.size() == 200);
  CHECK(m.filter(Subset::Train).records.size() == 120);
  CHECK(m.filter(Subset::Dev).records.size() == 40);
  CHECK(m.filter(Subset::Eval).records.size() == 40);
}

TEST_CASE("pseudo speech is mostly voiced with F0 in range")
{
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const Waveform     w = synth_pseudo_speech(derive_seed(seed, "corpus"), 1.0 + 0.25 * double(seed));
    const Eigen::Index frame = 400, hop = 160;
    int                total = 0;
    std::vector<double> f0;
    for (Eigen::Index s = 0; s + frame <= w.size(); s += hop, ++total) {
      const auto est = estimate_f0(w.samples.segment(s, frame), w.sample_rate);
      if (est.voiced)
        f0.push_back(est.f0);
    }
    CAPTURE(seed);
    CHECK(double(f0.size()) >= 0.5 * double(total));
    REQUIRE(!f0.empty());
    std::nth_element(f0.begin(), f0.begin() + std::ptrdiff_t(f0.size() / 2), f0.end());
    CHECK(f0[f0.size() / 2] >= 75.0);
    CHECK(f0[f0.size() / 2] <= 320.0);
    CHECK(w.samples.abs().maxCoeff() <= 1.0);
    CHECK(w.samples.allFinite());
  }
}

TEST_CASE("pseudo speech length and determinism")
{
  const Waveform a = synth_pseudo_speech(5, 2.5);
  CHECK(a.sample_rate == 16000);
  CHECK(a.size() == 40000);
  CHECK((synth_pseudo_speech(5, 2.5).samples == a.samples).all());
  CHECK_THROWS_AS(synth_pseudo_speech(5, 0.0), UsageError);
}

TEST_CASE("trim_nonspeech")
{
  const int sr = 16000;
  SUBCASE("silence + tone + silence")
  {
    ArrayXd x = ArrayXd::Zero(2 * sr);
    x.segment(sr / 2, sr) = sine(440.0, sr, sr, 0.5);
    const Waveform w{x, sr};
    const Waveform t = trim_nonspeech(w);
    CHECK(std::abs(double(t.size()) / sr - 1.0) <= 0.040);
    CHECK((w.samples == x).all());
    const Waveform tt = trim_nonspeech(t);
    CHECK(tt.size() == t.size());
    CHECK((tt.samples == t.samples).all());
  }
  SUBCASE("no quiet edges leaves the signal alone")
  {
    const Waveform w{sine(300.0, sr, sr, 0.3), sr};
    const Waveform t = trim_nonspeech(w);
    CHECK(t.size() == w.size());
    CHECK((t.samples == w.samples).all());
  }
  SUBCASE("interior silence is kept")
  {
    ArrayXd x = sine(300.0, sr, sr, 0.3);
    x.segment(6000, 4000).setZero();
    const Waveform t = trim_nonspeech({x, sr});
    CHECK((t.samples == x).all());
  }
  SUBCASE("all zero gives a centred stub")
  {
    const Waveform t = trim_nonspeech({ArrayXd::Zero(sr), sr});
    CHECK(t.size() == sr / 10);
  }
  SUBCASE("idempotent on generated speech")
  {
    const Waveform w = synth_pseudo_speech(77, 1.7);
    const Waveform t = trim_nonspeech(w);
    CHECK(t.size() <= w.size());
    CHECK((trim_nonspeech(t).samples == t.samples).all());
  }
  CHECK_THROWS_AS(trim_nonspeech({ArrayXd(), sr}), DataError);
}

namespace {

// A tiny paired set: corpus plus two fast channels, shared by the trainer
// cases.
struct TinySet
{
  fs::path      dir;
  TrialManifest manifest;
};

const TinySet &tiny_set()
{
  static const TinySet set = [] {
    TinySet          s{scratch("tiny"), {}};
    DeskCorpusConfig cfg;
    cfg.n_trials = 20;
    cfg.min_duration = 1.0;
    cfg.max_duration = 1.5;
    const auto bona = gen_desk_corpus(cfg, 3, s.dir / "corpus");
    s.manifest = build_vocoded_set(bona, parse_channels("phase_rand,lpc16"), s.dir / "voc", 1).manifest;
    return s;
  }();
  return set;
}

TrainConfig tiny_train(LossMode mode)
{
  TrainConfig t;
  t.loss.mode = mode;
  t.max_epochs = 2;
  t.spoofs_per_batch = 2;
  t.shape.input = t.frontend.dim();
  return t;
}

} // namespace

TEST_CASE("training is deterministic for a seed")
{
  const auto       &s = tiny_set();
  const AugmentPlan plan = default_plan(derive_seed(4, "augment"));
  for (LossMode mode : {LossMode::CE, LossMode::CE_CF}) {
    CAPTURE(to_string(mode));
    const TrainConfig t = tiny_train(mode);
    const TrainData   tr = make_train_data(s.manifest.filter(Subset::Train), t.frontend, &plan, 1, 1);
    const TrainData   dv = make_train_data(s.manifest.filter(Subset::Dev), t.frontend, &plan, 1, 1);
    CHECK(tr.bona.size() == 12);
    CHECK(tr.spoof.size() == 24);
    const TrainResult a = train(tr, dv, t, 4);
    const TrainResult b = train(tr, dv, t, 4);
    REQUIRE(a.history.size() == 2);
    CHECK(a.best_epoch >= 1);
    for (std::size_t e = 0; e < a.history.size(); ++e) {
      CHECK(a.history[e].train_loss == b.history[e].train_loss);
      CHECK(a.history[e].dev_loss == b.history[e].dev_loss);
      CHECK(std::isfinite(a.history[e].train_loss));
    }
    for (std::size_t l = 0; l < a.best.layers.size(); ++l)
      CHECK(a.best.layers[l].w == b.best.layers[l].w);

    const TrainResult c = train(tr, dv, t, 5);
    CHECK(c.best.layers[0].w != a.best.layers[0].w);

    const ScoreSet s1 = score_set(s.manifest.filter(Subset::Eval), a.best, "eval");
    const ScoreSet s2 = score_set(s.manifest.filter(Subset::Eval), a.best, "eval");
    REQUIRE(s1.entries.size() == 12);
    for (std::size_t i = 0; i < s1.entries.size(); ++i)
      CHECK(s1.entries[i].score == s2.entries[i].score);
  }
}

TEST_CASE("score_set reports unreadable trials as missing")
{
  const auto   &s = tiny_set();
  const TrainConfig t = tiny_train(LossMode::CE);
  const ModelParams p = init_params(t.shape, t.frontend, 1);
  TrialManifest     m = s.manifest.filter(Subset::Eval);
  m.records[0].path = "does/not/exist.wav";
  const ScoreSet sc = score_set(m, p, "eval");
  CHECK(sc.missing == std::vector<std::string>{m.records[0].trial_id});
  CHECK(sc.entries.size() == m.records.size() - 1);
}

TEST_CASE("segment cropping")
{
  TrainConfig t;
  CHECK(max_segment_frames(t) == 398);
  // A 2 s trial (198 frames) is shorter than the 4 s cap: no crop.
  const Waveform w{vcm::test::noise(32000, 3, 0.1), 16000};
  const MatrixXd f = frontend(w, t.frontend);
  CHECK(f.rows() == 198);
  CHECK(f.rows() < max_segment_frames(t));
  CHECK(crop_frames(f, 0, f.rows()) == f);
  CHECK(crop_frames(f, 10, 5) == f.middleRows(10, 5));
  CHECK_THROWS_AS(crop_frames(f, 195, 5), UsageError);
}

TEST_CASE("train config validation")
{
  TrainConfig t = tiny_train(LossMode::CE_CF);
  CHECK_NOTHROW(validate(t));
  t.augment = false;
  CHECK_THROWS_AS(validate(t), UsageError);
  t = tiny_train(LossMode::CE_CF);
  t.views = 0;
  CHECK_THROWS_AS(validate(t), UsageError);
  t = tiny_train(LossMode::CE);
  t.lr0 = 0.0;
  CHECK_THROWS_AS(validate(t), UsageError);
}

TEST_CASE("experiment config")
{
  const fs::path dir = scratch("config");

  SUBCASE("defaults")
  {
    const auto cfg = default_experiment_config();
    CHECK(cfg.train.frontend.excitation);
    CHECK(cfg.train.shape.input == cfg.train.frontend.dim());
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
    REQUIRE(cfg.systems.size() == 3);
    CHECK(cfg.systems[1].name == "cf_paired");
    CHECK_NOTHROW(validate(cfg));
  }

  SUBCASE("round trip through the canonical rendering")
  {
    std::ofstream(dir / "a.ini") << "[data]\ncorpus_trials = 60\ntrain_manifest = t.tsv\n"
                                    "dev_manifest = d.tsv\neval_manifest = e.tsv\n"
                                    "[channels]\nlist = lpc16, phase_rand\n"
                                    "[train]\nlr0 = 0.0005\nspoofs_per_batch = 2\n"
                                    "[loss]\nlevels = sequence\n"
                                    "[run]\nseeds = 4,9\nsystems = ce,mine\n"
                                    "[system:mine]\nloss = ce_cf\npairing = random\n";
    const auto cfg = load_experiment_config(dir / "a.ini");
    CHECK(cfg.corpus_trials == 60);
    CHECK(cfg.train_manifest == dir / "t.tsv");
    CHECK(cfg.channels == std::vector<std::string>{"lpc16", "phase_rand"});
    CHECK(cfg.train.lr0 == 0.0005);
    CHECK(cfg.train.loss.cf.levels == CfLevels::Sequence);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{4, 9});
    REQUIRE(cfg.systems.size() == 2);
    CHECK(cfg.systems[1].pairing == Pairing::Random);

    std::ofstream(dir / "b.ini") << to_ini(cfg);
    auto back = load_experiment_config(dir / "b.ini");
    CHECK(config_hash(back) == config_hash(cfg));
    // Relative output paths resolve against the file on reload.
    CHECK(back.out_dir == dir / "vcm_out");
    back.out_dir = cfg.out_dir;
    CHECK(to_ini(back) == to_ini(cfg));
    CHECK(config_hash(back) == config_hash(cfg));

    ExperimentConfig moved = cfg;
    moved.out_dir = "elsewhere";
    CHECK(config_hash(moved) == config_hash(cfg));
    moved.train.lr0 = 0.001;
    CHECK(config_hash(moved) != config_hash(cfg));
  }

  SUBCASE("errors")
  {
    auto bad = [&](const std::string &text) {
      std::ofstream(dir / "bad.ini") << text;
      CHECK_THROWS_AS(load_experiment_config(dir / "bad.ini"), UsageError);
    };
    bad("[nonsense]\nx = 1\n");
    bad("[train]\nlr_zero = 1\n");
    bad("[train]\nlr0 = fast\n");
    bad("[run]\nsystems = unheard_of\n");
    bad("[channels]\nlist = not_a_channel\n");
    bad("[data]\ncorpus_trials = 5\n");
    bad("[train]\nspoofs_per_batch = 5\n");
    bad("[system:x]\nloss = ce_cf\naugment = false\n");
    CHECK_THROWS_AS(load_experiment_config(dir / "missing.ini"), UsageError);
  }
}

TEST_CASE("augment plan is seeded per run")
{
  const auto cfg = default_experiment_config();
  const auto a = augment_plan(cfg, 1), b = augment_plan(cfg, 2);
  CHECK(a.ops.size() == 3);
  CHECK(a.master_seed != b.master_seed);
  CHECK(augment_plan(cfg, 1).master_seed == a.master_seed);
}
