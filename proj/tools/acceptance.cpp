// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 9).

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "vcm/experiment.hpp"
#include "vcm/iir.hpp"

namespace fs = std::filesystem;
using namespace vcm;

namespace {

// Pinned tolerances.
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kGradSeconds = 30.0;
constexpr double kLossRelTol = 1e-9;
constexpr double kStopbandDb = 40.0;
constexpr double kPassbandDb = 1.0;
constexpr double kZeroPhaseTol = 1e-9;
constexpr double kDeskEer = 0.05;
constexpr double kSecondsPerSeed = 600.0;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0)
{
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome
{
  bool        pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string &name, const std::function<Outcome()> &fn)
{
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception &e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  failures += !o.pass;
  std::cout << "criterion " << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << name << ": "
            << o.detail << std::endl;
}

std::string fmt(double v, int prec = 3)
{
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

// -- 1 ---------------------------------------------------------------------

using Mat = FrameMatrix<double>;

Mat gaussian(std::mt19937_64 &rng, Eigen::Index n, Eigen::Index d)
{
  std::normal_distribution<double> g(0.0, 1.0);
  Mat                              x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    x.data()[i] = g(rng);
  return x;
}

// Central differences of the contrastive loss with respect to every frame
// entry of every member.
double frame_gradient_error(CfBatch<double> b, const CfConfig &cfg)
{
  const auto analytic = contrastive_feature_loss(b, cfg);
  double     worst = 0.0;
  for (std::size_t m = 0; m < b.size(); ++m) {
    Mat       &x = m < b.bona.size() ? b.bona[m] : b.spoof[m - b.bona.size()];
    const Mat &g = m < b.bona.size() ? analytic.grad_bona[m] : analytic.grad_spoof[m - b.bona.size()];
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double keep = x.data()[i];
      x.data()[i] = keep + kGradStep;
      const double up = contrastive_feature_loss(b, cfg, false).loss;
      x.data()[i] = keep - kGradStep;
      const double down = contrastive_feature_loss(b, cfg, false).loss;
      x.data()[i] = keep;
      worst = std::max(worst, test::rel_error((up - down) / (2 * kGradStep), g.data()[i]));
    }
  }
  return worst;
}

Outcome gradient_check()
{
  const auto      t0 = Clock::now();
  std::mt19937_64 rng(derive_seed(1, "acceptance-grad"));
  std::uniform_int_distribution<int> frames(2, 5), dims(2, 8);
  const CfConfig seq{0.07, CfLevels::Sequence}, utt{0.07, CfLevels::Utterance};
  const LossConfig modes[] = {{LossMode::CE, {}},
                              {LossMode::CF, seq},
                              {LossMode::CF, utt},
                              {LossMode::CE_CF, {0.07, CfLevels::Both}}};
  double worst_model = 0.0, worst_frame = 0.0;
  for (int k = 0; k < 20; ++k) {
    const int n = frames(rng), d = dims(rng);
    // Through the network, every trainable parameter.
    const ModelParams p = test::tiny_model(rng, 3, 5, d);
    const TrainBatch  b = test::random_batch(rng, 2, 4, n, 4);
    for (const auto &cfg : modes)
      worst_model = std::max(worst_model, test::max_gradient_error(b, p, cfg, kGradStep));
    // Directly on the N x D feature sequences.
    CfBatch<double> fb;
    for (int i = 0; i < 2; ++i)
      fb.bona.push_back(gaussian(rng, n, d));
    for (int j = 0; j < 4; ++j)
      fb.spoof.push_back(gaussian(rng, n, d));
    for (const auto &cfg : {seq, utt, CfConfig{0.07, CfLevels::Both}})
      worst_frame = std::max(worst_frame, frame_gradient_error(fb, cfg));
  }
  const double secs = since(t0);
  const bool   ok = worst_model < kGradTol && worst_frame < kGradTol && secs < kGradSeconds;
  return {ok, "max rel err " + fmt(worst_model) + " (parameters), " + fmt(worst_frame) +
                  " (features), tol " + fmt(kGradTol) + "; 20 batches in " + fmt(secs) + " s"};
}

// -- 2 ---------------------------------------------------------------------

Outcome loss_oracle()
{
  std::mt19937_64                    rng(derive_seed(2, "acceptance-loss"));
  std::uniform_int_distribution<int> ni(2, 4), nj(2, 6), nn(1, 6), nd(1, 8);
  const CfConfig                     seq{0.07, CfLevels::Sequence};
  double                             worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int       n = nn(rng), d = nd(rng);
    CfBatch<double> b;
    for (int i = ni(rng); i > 0; --i)
      b.bona.push_back(gaussian(rng, n, d));
    for (int j = nj(rng); j > 0; --j)
      b.spoof.push_back(gaussian(rng, n, d));
    const double got = contrastive_feature_loss(b, seq, false).loss;
    const double want = double(oracle::naive_loss(b.bona, b.spoof, 0.07L));
    worst = std::max(worst, std::abs(got - want) / std::max(std::abs(want), 1e-300));
  }
  Mat v(3, 4);
  v << 0.3, -1.0, 2.0, 0.5, 1.0, 1.0, -0.2, 0.0, -0.7, 0.1, 0.4, 2.5;
  const double sym = contrastive_feature_loss(CfBatch<double>{{v, v}, {v, v}}, seq, false).loss;
  const double closed = 4.0 * std::log(3.0);
  const double sym_err = std::abs(sym - closed) / closed;
  return {worst < kLossRelTol && sym_err < kLossRelTol,
          "max rel err vs brute force " + fmt(worst) + " over 100 batches; symmetric batch " +
              fmt(sym, 10) + " vs 4 ln 3 = " + fmt(closed, 10)};
}

// -- 3 ---------------------------------------------------------------------

Outcome eer_oracle()
{
  std::mt19937_64                        rng(derive_seed(3, "acceptance-eer"));
  std::uniform_int_distribution<int>     total(2, 1000), grid(0, 2);
  std::normal_distribution<double>       g(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-1.0, 3.0);
  int                                    mismatches = 0;
  for (int k = 0; k < 500; ++k) {
    const int                          n = total(rng);
    std::uniform_int_distribution<int> split(1, n - 1);
    const int                          nb = split(rng);
    const double                       mu = shift(rng);
    // A third of the sets are rounded to force ties.
    const int           coarse = grid(rng);
    auto                draw = [&](double m) {
      const double v = m + g(rng);
      return coarse == 0 ? std::round(v * 4.0) / 4.0 : v;
    };
    std::vector<double> bona, spoof;
    for (int i = 0; i < nb; ++i)
      bona.push_back(draw(mu));
    for (int i = nb; i < n; ++i)
      spoof.push_back(draw(0.0));
    const EerResult a = compute_eer(bona, spoof), b = oracle::brute_force_eer(bona, spoof);
    mismatches += !(a.eer == b.eer && a.threshold == b.threshold);
  }
  std::vector<double> hi, lo, same;
  for (int i = 0; i < 100; ++i) {
    hi.push_back(10.0 + i);
    lo.push_back(-10.0 - i);
    same.push_back(0.5 * i);
  }
  const double perfect = compute_eer(hi, lo).eer;
  const double coin = compute_eer(same, same).eer;
  return {mismatches == 0 && perfect == 0.0 && coin == 0.5,
          std::to_string(mismatches) + " of 500 sets differ from enumeration; perfect " +
              fmt(perfect) + ", identical " + fmt(coin)};
}

// -- 4 ---------------------------------------------------------------------

double rms(const ArrayXd &x) { return std::sqrt(x.square().mean()); }

ArrayXd tone(double f, double sr, Eigen::Index n)
{
  return (ArrayXd::LinSpaced(n, 0.0, double(n - 1)) * (2.0 * M_PI * f / sr)).sin();
}

Outcome filter_fidelity()
{
  const double  sr = 16000.0, lo = 2000.0, hi = 3000.0;
  const auto    c = design_butterworth_bandstop(10, lo, hi, sr);
  const double  centre = sr / M_PI * std::atan(std::sqrt(std::tan(M_PI * lo / sr) * std::tan(M_PI * hi / sr)));
  const Eigen::Index n = 16000, edge = 200;
  auto gain_db = [&](double f) {
    const ArrayXd x = tone(f, sr, n);
    const ArrayXd y = filtfilt(c, x);
    return 20.0 * std::log10(rms(y.segment(edge, n - 2 * edge)) / rms(x.segment(edge, n - 2 * edge)));
  };
  const double stop = gain_db(centre), pass = gain_db(500.0);

  // Zero phase: a centred impulse comes back symmetric, and filtering the
  // time-reversed input equals reversing the output.
  ArrayXd imp = ArrayXd::Zero(4001);
  imp[2000] = 1.0;
  const ArrayXd h = filtfilt(c, imp);
  double        asym = (h - h.reverse()).abs().maxCoeff();
  std::mt19937_64                  rng(derive_seed(4, "acceptance-filter"));
  std::normal_distribution<double> g(0.0, 1.0);
  ArrayXd                          x(8000);
  for (auto &v : x)
    v = g(rng);
  asym = std::max(asym, (ArrayXd(filtfilt(c, ArrayXd(x.reverse()))) - ArrayXd(filtfilt(c, x).reverse()))
                            .abs()
                            .maxCoeff());
  return {c.order() == 10 && stop <= -kStopbandDb && std::abs(pass) < kPassbandDb && asym < kZeroPhaseTol,
          "order " + std::to_string(c.order()) + ", stop-band centre " + fmt(stop) +
              " dB, 500 Hz " + fmt(pass) + " dB, reversal asymmetry " + fmt(asym)};
}

// -- 5, 6, 7 ---------------------------------------------------------------

struct DeskRun
{
  ExperimentReport report;
  double           seconds = 0.0;
  std::size_t      seeds = 0;
};

DeskRun desk_run(const fs::path &dir)
{
  ExperimentConfig cfg = default_experiment_config();
  cfg.out_dir = dir;
  fs::remove_all(dir);
  const auto t0 = Clock::now();
  DeskRun    r;
  r.report = run_experiment(cfg);
  r.seconds = since(t0);
  r.seeds = cfg.seeds.size();
  return r;
}

double mean_of(const DeskRun &r, const std::string &sys, const std::string &set)
{
  return r.report.means.at(sys).at(set);
}

Outcome desk_eer(const DeskRun &r)
{
  double      worst = 0.0;
  std::string per_seed;
  for (const auto &run : r.report.runs)
    if (run.system == "cf_paired") {
      worst = std::max(worst, run.eer.at("eval").eer);
      per_seed += (per_seed.empty() ? "" : ", ") + fmt(run.eer.at("eval").eer);
    }
  const double per = r.seconds / double(r.seeds);
  return {worst <= kDeskEer && per < kSecondsPerSeed,
          "CE+CF paired eval EER per seed [" + per_seed + "], limit " + fmt(kDeskEer) + "; " +
              fmt(per) + " s per seed (cold run incl. synthesis), limit " + fmt(kSecondsPerSeed)};
}

Outcome pairing_trend(const DeskRun &r)
{
  const double cf = mean_of(r, "cf_paired", "pooled"), ce = mean_of(r, "ce_aug", "pooled");
  return {cf <= ce, "seed-mean pooled EER CE+CF paired " + fmt(cf) + " vs CE+aug " + fmt(ce)};
}

Outcome resampling_trend(const DeskRun &r)
{
  const double rs = mean_of(r, "cf_paired_rs", "eval"), matched = mean_of(r, "cf_paired", "eval");
  return {rs >= matched,
          "seed-mean eval EER roundtrip-trained " + fmt(rs) + " vs matched-rate " + fmt(matched)};
}

// -- 8 ---------------------------------------------------------------------

Outcome holm()
{
  std::mt19937_64                        rng(derive_seed(8, "acceptance-holm"));
  std::uniform_int_distribution<int>     size(1, 21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int                                    bad_seq = 0, bad_superset = 0;
  for (int k = 0; k < 100; ++k) {
    std::vector<double> p(std::size_t(size(rng)));
    for (auto &v : p)
      v = std::pow(u(rng), 3.0) * 0.2; // skewed low so rejections happen
    const auto got = holm_bonferroni(p, 0.05);
    bad_seq += got != oracle::holm_sequential(p, 0.05);
    const auto bonf = oracle::bonferroni(p, 0.05);
    for (std::size_t i = 0; i < p.size(); ++i)
      if (bonf[i] && !got[i]) {
        ++bad_superset;
        break;
      }
  }
  return {bad_seq == 0 && bad_superset == 0,
          std::to_string(bad_seq) + " of 100 differ from sequential application, " +
              std::to_string(bad_superset) + " miss a Bonferroni rejection"};
}

// -- 9 ---------------------------------------------------------------------

int shell(const std::string &cmd)
{
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::vector<std::string> compare_trees(const fs::path &a, const fs::path &b, std::size_t &count)
{
  std::vector<std::string> diffs;
  for (const auto &e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().extension() == ".wav")
      continue;
    const auto    rel = fs::relative(e.path(), a);
    std::ifstream fa(e.path(), std::ios::binary), fb(b / rel, std::ios::binary);
    const std::string ca{std::istreambuf_iterator<char>(fa), {}};
    const std::string cb{std::istreambuf_iterator<char>(fb), {}};
    ++count;
    if (!fb || ca != cb)
      diffs.push_back(rel.string());
  }
  return diffs;
}

Outcome determinism(const fs::path &cli, const fs::path &work)
{
  fs::remove_all(work);
  fs::create_directories(work);
  {
    std::ofstream ini(work / "small.ini");
    ini << "[data]\ncorpus_trials = 30\n"
        << "[channels]\nlist = phase_rand,lpc16\n"
        << "[train]\nmax_epochs = 3\nspoofs_per_batch = 2\n"
        << "[run]\nseeds = 7\nsystems = ce_aug,cf_paired,cf_paired_rs\n";
  }
  const std::string v = "'" + cli.string() + "' -q ";
  const std::string cfg = " --config '" + (work / "small.ini").string() + "'";
  auto sequence = [&](const std::string &tag) {
    const std::string out = (work / tag).string();
    const std::string voc = out + "/vocoded/native/manifest.tsv";
    const std::string ck = out + "/runs/cf_paired/seed7/checkpoint.txt";
    const std::string cmds[] = {
        v + "run" + cfg + " --out '" + out + "'",
        v + "gen-corpus --trials 20 --seed 5" + cfg + " --out '" + out + "/cli/corpus'",
        v + "synth --manifest '" + out + "/cli/corpus/manifest.tsv' --channels phase_rand,lpc16" +
            cfg + " --out '" + out + "/cli/voc'",
        v + "train --manifest '" + out + "/cli/voc/manifest.tsv' --system cf_paired --seed 7" + cfg +
            " --out '" + out + "/cli/model'",
        v + "score --manifest '" + voc + "' --checkpoint '" + ck + "' --trim --name trim" + cfg +
            " --out '" + out + "/cli/scores'",
        v + "eer --scores '" + out + "/runs/cf_paired/seed7/scores_eval.txt' --scores '" + out +
            "/cli/scores/trim.txt' --manifest '" + voc + "'" + cfg + " --out '" + out + "/cli/eer'",
        v + "group-report --scores '" + out + "/cli/scores/trim.txt' --manifest '" + voc + "'" + cfg +
            " --out '" + out + "/cli/groups'",
        v + "sigtest --system a='" + out + "/runs/ce_aug/seed7/scores_eval.txt' --system b='" + out +
            "/runs/cf_paired/seed7/scores_eval.txt' --manifest '" + voc + "'" + cfg + " --out '" +
            out + "/cli/sig'"};
    for (const auto &c : cmds)
      if (const int rc = shell(c + " > /dev/null"); rc != 0)
        throw std::runtime_error("command failed (" + std::to_string(rc) + "): " + c);
  };
  // Same output directory both times; the first result is moved aside so
  // the second run starts cold.
  sequence("run");
  fs::rename(work / "run", work / "first");
  sequence("run");
  std::size_t count = 0;
  const auto  diffs = compare_trees(work / "first", work / "run", count);
  std::string detail = std::to_string(count) + " output files compared byte-wise (CSV, scores, "
                                               "manifests, checkpoints, report.json), " +
                       std::to_string(diffs.size()) + " differ";
  if (!diffs.empty())
    detail += ", first: " + diffs.front();
  return {count > 0 && diffs.empty(), detail};
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App    app{"Acceptance checks"};
  std::string cli = "vcm", work = "acceptance_work";
  bool        skip_desk = false;
  app.add_option("--cli", cli, "Path to the vcm executable");
  app.add_option("--work", work, "Scratch directory");
  app.add_flag("--skip-desk", skip_desk, "Skip the full desk run (criteria 5-7 reported as FAIL)");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  const fs::path root = fs::absolute(work);
  fs::create_directories(root);

  report(1, "gradient correctness", gradient_check);
  report(2, "contrastive loss oracle", loss_oracle);
  report(3, "EER oracle", eer_oracle);
  report(4, "filter fidelity", filter_fidelity);

  std::optional<DeskRun> desk;
  std::string            desk_error = "skipped";
  if (!skip_desk) {
    try {
      desk = desk_run(root / "desk");
    } catch (const std::exception &e) {
      desk_error = std::string("desk run failed: ") + e.what();
    }
  }
  auto with_desk = [&](Outcome (*fn)(const DeskRun &)) {
    return [&, fn]() -> Outcome { return desk ? fn(*desk) : Outcome{false, desk_error}; };
  };
  report(5, "end-to-end desk run", with_desk(desk_eer));
  report(6, "paired CE+CF vs CE with augmentation", with_desk(pairing_trend));
  report(7, "resampling roundtrip trend", with_desk(resampling_trend));

  report(8, "Holm-Bonferroni", holm);
  report(9, "rerun determinism", [&] { return determinism(fs::absolute(cli), root / "determinism"); });

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed")
            << std::endl;
  return std::min(failures, 9);
}
