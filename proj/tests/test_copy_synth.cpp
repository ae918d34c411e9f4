#include "doctest.h"

#include <filesystem>
#include <set>

#include "test_support.hpp"
#include "vcm/copy_synth.hpp"

using namespace vcm;
using vcm::test::autocorr_f0;
using vcm::test::correlation;
using vcm::test::harmonic_tone;
using vcm::test::noise;
using vcm::test::rms_of;
using vcm::test::sine;

namespace {

// Order-p all-pole envelope in dB from the Toeplitz normal equations,
// solved directly (no Levinson recursion).
Eigen::ArrayXd lpc_envelope_db(const ArrayXd &x, int order, int points, double sr, double fmax)
{
  VectorXd r(order + 1);
  for (int lag = 0; lag <= order; ++lag)
    r[lag] = (x.head(x.size() - lag) * x.tail(x.size() - lag)).sum();
  MatrixXd toeplitz(order, order);
  for (int i = 0; i < order; ++i)
    for (int j = 0; j < order; ++j)
      toeplitz(i, j) = r[std::abs(i - j)];
  const VectorXd a = toeplitz.ldlt().solve(r.tail(order));
  const double   err = r[0] - a.dot(r.tail(order));
  Eigen::ArrayXd env(points);
  for (int p = 0; p < points; ++p) {
    const double         w = 2.0 * M_PI * (100.0 + (fmax - 100.0) * p / (points - 1)) / sr;
    std::complex<double> den = 1.0;
    for (int k = 1; k <= order; ++k)
      den -= a[k - 1] * std::polar(1.0, -w * k);
    env[p] = 10.0 * std::log10(err / std::norm(den));
  }
  return env;
}

double companion_max_radius(const VectorXd &a)
{
  const Eigen::Index p = a.size();
  MatrixXd           comp = MatrixXd::Zero(p, p);
  comp.row(0) = a.transpose();
  for (Eigen::Index i = 1; i < p; ++i)
    comp(i, i - 1) = 1.0;
  return comp.eigenvalues().cwiseAbs().maxCoeff();
}

} // namespace

TEST_CASE("griffin_lim on harmonic tones")
{
  const StftConfig cfg;
  for (double f0 : {150.0, 200.0, 240.0}) {
    const Waveform w{harmonic_tone(f0, 16000, 16000), 16000};
    const MatrixXd mag = magnitude(stft(w, cfg));
    const auto     gl = griffin_lim(mag, cfg, 32, 16000);
    REQUIRE(gl.spectral_convergence.size() == 32);
    CHECK(gl.spectral_convergence.back() < 0.1);
    CHECK(spectral_convergence(gl.wave, mag, cfg) ==
          doctest::Approx(gl.spectral_convergence.back()).epsilon(1e-9));
    for (std::size_t i = 1; i < gl.spectral_convergence.size(); ++i)
      CHECK(gl.spectral_convergence[i] <= gl.spectral_convergence[i - 1] * (1.0 + 1e-9));
  }
}

TEST_CASE("griffin_lim edge cases")
{
  const StftConfig cfg;
  const auto       zero = griffin_lim(MatrixXd::Zero(10, 257), cfg, 4, 16000);
  CHECK(zero.wave.samples.abs().maxCoeff() == 0.0);
  CHECK(zero.wave.size() == 9 * 128 + 512);

  const MatrixXd random = MatrixXd::Random(40, 257).cwiseAbs();
  const double   e1 = griffin_lim(random, cfg, 1, 16000).spectral_convergence.back();
  const double   e32 = griffin_lim(random, cfg, 32, 16000).spectral_convergence.back();
  CHECK(e32 <= e1);
  CHECK_THROWS_AS(griffin_lim(random, cfg, 0, 16000), UsageError);
  CHECK_THROWS_AS(griffin_lim(MatrixXd::Zero(4, 100), cfg, 1, 16000), UsageError);
}

TEST_CASE("lpc_analyze recovers an AR(2) process")
{
  std::mt19937_64                  rng(42);
  std::normal_distribution<double> e(0.0, 1.0);
  ArrayXd                          x(20000);
  double                           x1 = 0.0, x2 = 0.0;
  for (auto &v : x) {
    v = 1.5 * x1 - 0.7 * x2 + e(rng);
    x2 = x1;
    x1 = v;
  }
  const LpcResult res = lpc_analyze(x, 2);
  CHECK_FALSE(res.silent);
  CHECK(res.coefficients[0] == doctest::Approx(1.5).epsilon(0.05 / 1.5));
  CHECK(std::abs(res.coefficients[1] + 0.7) < 0.05);
  CHECK(std::abs(res.coefficients[0] - 1.5) < 0.05);
}

TEST_CASE("lpc_analyze on white noise and silence")
{
  const ArrayXd   win = make_window(Window::Hann, 400);
  const LpcResult white = lpc_analyze(noise(400, 3) * win, 16);
  CHECK(white.residual_ratio >= 0.9);

  const LpcResult silent = lpc_analyze(ArrayXd::Zero(400), 16);
  CHECK(silent.silent);
  CHECK(silent.gain == 1.0);
  CHECK(silent.coefficients.isZero());

  CHECK_THROWS_AS(lpc_analyze(ArrayXd::Ones(30), 16), UsageError);
}

TEST_CASE("lpc synthesis filters are stable")
{
  const ArrayXd win = make_window(Window::Hann, 400);
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    ArrayXd frame = harmonic_tone(80.0 + 7.0 * seed, 16000, 400) + 0.01 * noise(400, seed);
    for (Eigen::Index i = frame.size() - 1; i > 0; --i)
      frame[i] -= 0.97 * frame[i - 1];
    const LpcResult res = lpc_analyze(frame * win, 16);
    CHECK(companion_max_radius(res.coefficients) < 1.0);
  }
}

TEST_CASE("estimate_f0")
{
  const PitchEstimate tone = estimate_f0(sine(200.0, 16000, 400), 16000);
  CHECK(tone.voiced);
  CHECK(std::abs(tone.f0 - 200.0) <= 2.0);

  for (double f0 : {85.0, 123.0, 290.0}) {
    const PitchEstimate h = estimate_f0(harmonic_tone(f0, 16000, 640), 16000);
    CHECK(h.voiced);
    CHECK(std::abs(h.f0 - f0) <= 0.02 * f0);
  }

  CHECK_FALSE(estimate_f0(noise(400, 8), 16000).voiced);
  CHECK_FALSE(estimate_f0(ArrayXd::Zero(400), 16000).voiced);
  CHECK_THROWS_AS(estimate_f0(ArrayXd::Zero(100), 16000), UsageError);
}

TEST_CASE("lpc_resynthesize")
{
  const Waveform in{harmonic_tone(150.0, 16000, 16000), 16000};
  const Waveform out = lpc_resynthesize(in);
  REQUIRE(out.size() == in.size());

  const ArrayXd mid_in = in.samples.segment(4000, 8000);
  const ArrayXd mid_out = out.samples.segment(4000, 8000);
  const double  f_in = autocorr_f0(mid_in, 16000);
  const double  f_out = autocorr_f0(mid_out, 16000);
  CHECK(std::abs(f_out - f_in) <= 0.05 * f_in);

  const ArrayXd env_in = lpc_envelope_db(mid_in, 16, 200, 16000, 7000);
  const ArrayXd env_out = lpc_envelope_db(mid_out, 16, 200, 16000, 7000);
  CHECK((env_in - env_out).abs().mean() < 3.0);

  CHECK(rms_of(lpc_resynthesize(Waveform{ArrayXd::Zero(8000), 16000}).samples) < 1e-4);
}

TEST_CASE("channel naming and parsing")
{
  CHECK(VocoderChannel::griffin_lim_mel().name() == "gl_mel80");
  CHECK(VocoderChannel::coarse_mel_gl().name() == "gl_mel20");
  CHECK(VocoderChannel::phase_random().name() == "phase_rand");
  CHECK(VocoderChannel::lpc_source_filter().name() == "lpc16");
  const auto rs = parse_channel("gl_mel80@24000");
  CHECK(rs.intermediate_sr == 24000);
  CHECK(rs.name() == "gl_mel80_rs24000");
  CHECK(parse_channels("gl_mel80, gl_mel20,phase_rand,lpc16").size() == 4);
  CHECK_THROWS_AS(parse_channel("hifigan"), UsageError);
  CHECK_THROWS_AS(parse_channels(""), UsageError);
}

TEST_CASE("copy_synthesize through the griffin-lim channel keeps F0")
{
  const Waveform in{harmonic_tone(200.0, 16000, 16000), 16000};
  const Waveform out = copy_synthesize(in, VocoderChannel::griffin_lim_mel());
  REQUIRE(out.size() == in.size());
  CHECK(out.sample_rate == 16000);
  CHECK(std::abs(autocorr_f0(out.samples.segment(2000, 12000), 16000) - 200.0) <= 5.0);
}

TEST_CASE("phase randomisation keeps frame magnitudes only")
{
  const Waveform in{harmonic_tone(170.0, 16000, 16384), 16000};
  const Waveform out = copy_synthesize(in, VocoderChannel::phase_random(3));
  REQUIRE(out.size() == in.size());
  const StftConfig blocks{512, 512, 512, Window::Rectangular, false};
  const MatrixXd   a = magnitude(stft(in, blocks));
  const MatrixXd   b = magnitude(stft(out, blocks));
  for (Eigen::Index t = 0; t < a.rows(); ++t)
    CHECK((a.row(t) - b.row(t)).norm() <= 0.05 * a.row(t).norm());
  CHECK(correlation(in.samples, out.samples) < 0.9);
}

TEST_CASE("every channel preserves length and rate and is deterministic")
{
  const Waveform in{harmonic_tone(130.0, 16000, 12345) + 0.01 * noise(12345, 2), 16000};
  auto           channels = default_channels();
  for (auto ch : default_channels()) {
    ch.intermediate_sr = 24000;
    channels.push_back(ch);
  }
  for (const auto &ch : channels) {
    CAPTURE(ch.name());
    const Waveform a = copy_synthesize(in, ch);
    const Waveform b = copy_synthesize(in, ch);
    CHECK(a.size() == in.size());
    CHECK(a.sample_rate == in.sample_rate);
    CHECK((a.samples == b.samples).all());
    CHECK(a.samples.allFinite());
    CHECK(log_spectral_distance(in, a) > 0.5);
  }
}

TEST_CASE("intermediate rate equal to the native rate is a no-op wrapper")
{
  const Waveform in{harmonic_tone(140.0, 16000, 9000), 16000};
  for (auto ch : default_channels()) {
    const Waveform plain = copy_synthesize(in, ch);
    ch.intermediate_sr = 16000;
    CHECK((copy_synthesize(in, ch).samples == plain.samples).all());
  }
}

TEST_CASE("copy_synthesize preconditions")
{
  CHECK_THROWS_AS(copy_synthesize(Waveform{ArrayXd::Zero(4000), 16000},
                                  VocoderChannel::griffin_lim_mel()),
                  DataError);
  CHECK_THROWS_AS(copy_synthesize(Waveform{ArrayXd::Zero(4000), 4000},
                                  VocoderChannel::phase_random()),
                  DataError);
  // Silence passes through with a warning.
  const Waveform silent = copy_synthesize(Waveform{ArrayXd::Zero(8000), 16000},
                                          VocoderChannel::lpc_source_filter());
  CHECK(silent.size() == 8000);
}

namespace {

std::filesystem::path temp_dir(const std::string &name)
{
  auto p = std::filesystem::temp_directory_path() / ("vcm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TrialManifest write_bona(const std::filesystem::path &dir, int n)
{
  TrialManifest m;
  m.root = dir;
  for (int i = 0; i < n; ++i) {
    const std::string id = "b" + std::to_string(i);
    write_wav(dir / (id + ".wav"),
              Waveform{harmonic_tone(100.0 + 20 * i, 16000, 8000 + 1000 * i), 16000});
    m.records.push_back({id, id + ".wav", Label::Bonafide, "-", id,
                         i % 3 == 0 ? Subset::Eval : Subset::Train});
  }
  return m;
}

} // namespace

TEST_CASE("build_vocoded_set")
{
  const auto    dir = temp_dir("build");
  TrialManifest m = write_bona(dir, 3);

  SUBCASE("one bona fide trial, one channel")
  {
    TrialManifest one{{m.records[0]}, m.root};
    const auto    set = build_vocoded_set(one, {VocoderChannel::phase_random()}, dir / "voc1");
    REQUIRE(set.pairing.size() == 1);
    REQUIRE(set.pairing.at("b0").size() == 1);
    CHECK(set.pairing.at("b0")[0] == "b0__phase_rand");
  }

  SUBCASE("S channels per trial, lengths and pairing bijection")
  {
    m.records.push_back({"broken", "missing.wav", Label::Bonafide, "-", "broken", Subset::Dev});
    const auto channels = default_channels();
    const auto set = build_vocoded_set(m, channels, dir / "voc", 2);
    const auto spoofs = set.manifest.filter(Label::Spoof);
    CHECK(spoofs.records.size() == 3 * channels.size());

    std::set<std::string> seen;
    for (const auto &[bona, ids] : set.pairing)
      for (const auto &id : ids)
        CHECK(seen.insert(id).second);
    std::set<std::string> spoof_ids;
    for (const auto &r : spoofs.records) {
      spoof_ids.insert(r.trial_id);
      const TrialRecord *src = set.manifest.find(r.source_id);
      REQUIRE(src != nullptr);
      CHECK(r.subset == src->subset);
      CHECK(read_wav(set.manifest.resolve(r)).size() == read_wav(set.manifest.resolve(*src)).size());
    }
    CHECK(seen == spoof_ids);
    CHECK(set.pairing.at("broken").empty());

    // Writing and re-reading the manifest keeps every row.
    write_manifest(dir / "voc" / "manifest.tsv", set.manifest);
    const TrialManifest back = read_manifest(dir / "voc" / "manifest.tsv");
    CHECK(back.records.size() == set.manifest.records.size());
    CHECK(build_pairing_index(back) == set.pairing);
  }

  SUBCASE("nothing readable")
  {
    TrialManifest bad{{{"x", "nope.wav", Label::Bonafide, "-", "x", Subset::Train}}, dir};
    CHECK_THROWS_AS(build_vocoded_set(bad, default_channels(), dir / "voc2"), DataError);
    CHECK_THROWS_AS(build_vocoded_set(m, {}, dir / "voc2"), UsageError);
  }
}

TEST_CASE("pairing bookkeeping at the LA19trn scale")
{
  // 2,580 bona fide trials with four channels each: 10,320 spoofed trials.
  TrialManifest m;
  const char   *tags[] = {"gl_mel80", "gl_mel20", "phase_rand", "lpc16"};
  for (int i = 0; i < 2580; ++i) {
    const std::string id = "LA_T_" + std::to_string(1000000 + i);
    m.records.push_back({id, id + ".wav", Label::Bonafide, "-", id, Subset::Train});
    for (const char *tag : tags)
      m.records.push_back({id + "__" + tag, "x.wav", Label::Spoof, tag, id, Subset::Train});
  }
  validate(m);
  const auto   index = build_pairing_index(m);
  std::size_t  total = 0;
  for (const auto &[id, spoofs] : index) {
    CHECK(spoofs.size() == 4);
    total += spoofs.size();
  }
  CHECK(index.size() == 2580);
  CHECK(total == 10320);
}
