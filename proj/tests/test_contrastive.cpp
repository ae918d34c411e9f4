#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "oracles.hpp"
#include "vcm/contrastive_loss.hpp"

using namespace vcm;
using Mat = FrameMatrix<double>;
using vcm::oracle::naive_f;
using vcm::oracle::naive_loss;

namespace {

CfBatch<double> random_batch(std::mt19937_64 &rng, int ni, int nj, int n, int d)
{
  std::normal_distribution<double> g(0.0, 1.0);
  auto                             mk = [&] {
    Mat m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = g(rng);
    return m;
  };
  CfBatch<double> b;
  for (int i = 0; i < ni; ++i)
    b.bona.push_back(mk());
  for (int j = 0; j < nj; ++j)
    b.spoof.push_back(mk());
  return b;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

} // namespace

TEST_CASE("cosine sequence similarity")
{
  const double tau = 0.07;
  Mat          a(3, 4);
  a << 1, 2, 3, 4, -1, 0.5, 2, 1, 0.3, 0.3, -2, 1;
  CHECK(cosine_seq_similarity<double>(a, a, tau) == doctest::Approx(1.0 / 0.07).epsilon(1e-14));
  CHECK(cosine_seq_similarity<double>(a, a, tau) == doctest::Approx(14.285714285714286));

  Mat x(2, 2), y(2, 2);
  x << 1, 0, 0, 3;
  y << 0, 2, -5, 0;
  CHECK(cosine_seq_similarity<double>(x, y, tau) == 0.0);

  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    const auto b = random_batch(rng, 1, 1, 3, 4);
    const double f = cosine_seq_similarity<double>(b.bona[0], b.spoof[0], tau);
    CHECK(std::abs(f - double(naive_f(b.bona[0], b.spoof[0], tau))) < 1e-12);
    CHECK(std::abs(f) <= 1.0 / tau + 1e-12);
  }

  Mat z = Mat::Zero(2, 2);
  CHECK_THROWS_AS(cosine_seq_similarity<double>(z, z, tau), NumericalError);
  CHECK_NOTHROW(cosine_seq_similarity<double>(z, x, tau));
  CHECK_THROWS_AS(cosine_seq_similarity<double>(x, Mat::Ones(3, 2), tau), UsageError);
}

TEST_CASE("partition function")
{
  const double    tau = 0.07;
  Mat             v(1, 3);
  v << 1, 2, 3;
  CfBatch<double> same{{v, v}, {v, v}};
  CHECK(partition<double>(same, 0, tau) ==
        doctest::Approx(3.0 * std::exp(1.0 / tau)).epsilon(1e-12));

  CfBatch<double> ortho;
  for (int i = 0; i < 4; ++i) {
    Mat e = Mat::Zero(1, 4);
    e(0, i) = 1.0;
    (i < 2 ? ortho.bona : ortho.spoof).push_back(e);
  }
  for (std::size_t z = 0; z < 4; ++z)
    CHECK(partition<double>(ortho, z, tau) == doctest::Approx(3.0).epsilon(1e-14));

  std::mt19937_64 rng(9);
  for (int t = 0; t < 20; ++t) {
    const auto b = random_batch(rng, 2, 6, 4, 5);
    for (std::size_t z = 0; z < b.size(); ++z) {
      long double h = 0;
      for (std::size_t k = 0; k < b.size(); ++k)
        if (k != z)
          h += std::exp(naive_f(b.member(z), b.member(k), tau));
      CHECK(rel_err(partition<double>(b, z, tau), double(h)) < 1e-9);
    }
  }
}

TEST_CASE("contrastive loss closed forms")
{
  const CfConfig seq{0.07, CfLevels::Sequence};
  Mat            v(2, 3);
  v << 1, 2, 3, -1, 0, 2;
  CfBatch<double> same{{v, v}, {v, v}};
  CHECK(std::abs(contrastive_feature_loss(same, seq).loss - 4.0 * std::log(3.0)) < 1e-9);
  CHECK(std::abs(contrastive_feature_loss(same, seq).loss - 4.394449154672439) < 1e-9);
  CHECK(std::abs(contrastive_feature_loss(same, CfConfig{}).loss - 8.0 * std::log(3.0)) < 1e-9);

  // Bigger symmetric batch: (|I|+|J|) ln(|I|+|J|-1).
  CfBatch<double> big{{v, v, v}, {v, v, v, v, v}};
  CHECK(std::abs(contrastive_feature_loss(big, seq).loss - 8.0 * std::log(7.0)) < 1e-9);

  // Within-class identical, across-class orthogonal.
  Mat a = Mat::Zero(1, 2), b = Mat::Zero(1, 2);
  a(0, 0) = 2.0;
  b(0, 1) = 0.5;
  CfBatch<double> split{{a, a}, {b, b}};
  const double    per = std::log(1.0 + 2.0 * std::exp(-1.0 / 0.07));
  CHECK(std::abs(contrastive_feature_loss(split, seq).loss - 4.0 * per) < 1e-12);
  CHECK(std::abs(contrastive_feature_loss(split, seq).loss -
                 double(naive_loss(split.bona, split.spoof, 0.07L))) < 1e-12);
}

TEST_CASE("contrastive loss matches the brute-force oracle")
{
  std::mt19937_64 rng(2024);
  const CfConfig  seq{0.07, CfLevels::Sequence};
  for (int t = 0; t < 100; ++t) {
    const int  n = 1 + t % 6, d = 2 + t % 7;
    const auto b = random_batch(rng, 2, 8, n, d);
    const double got = contrastive_feature_loss(b, seq, false).loss;
    CHECK(rel_err(got, double(naive_loss(b.bona, b.spoof, 0.07L))) < 1e-9);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("contrastive loss invariances")
{
  std::mt19937_64 rng(77);
  for (int t = 0; t < 20; ++t) {
    auto         b = random_batch(rng, 3, 6, 4, 5);
    const double base = contrastive_feature_loss(b, CfConfig{}).loss;

    auto perm = b;
    std::shuffle(perm.bona.begin(), perm.bona.end(), rng);
    std::shuffle(perm.spoof.begin(), perm.spoof.end(), rng);
    CHECK(std::abs(contrastive_feature_loss(perm, CfConfig{}).loss - base) < 1e-10);

    auto scaled = b;
    scaled.spoof[2] *= 3.7;
    scaled.bona[0] *= 0.01;
    CHECK(std::abs(contrastive_feature_loss(scaled, CfConfig{}).loss - base) < 1e-10);
  }

  // One-frame sequences: sequence level equals utterance level.
  for (int t = 0; t < 10; ++t) {
    const auto b = random_batch(rng, 2, 4, 1, 6);
    const auto s = contrastive_feature_loss(b, CfConfig{0.07, CfLevels::Sequence});
    const auto u = contrastive_feature_loss(b, CfConfig{0.07, CfLevels::Utterance});
    CHECK(s.loss == doctest::Approx(u.loss).epsilon(1e-14));
    for (std::size_t i = 0; i < b.bona.size(); ++i)
      CHECK((s.grad_bona[i] - u.grad_bona[i]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("contrastive gradient")
{
  std::mt19937_64 rng(31337);
  for (CfLevels lv : {CfLevels::Sequence, CfLevels::Utterance, CfLevels::Both}) {
    const CfConfig cfg{0.07, lv};
    CAPTURE(to_string(lv));
    for (int t = 0; t < 20; ++t) {
      const auto b = random_batch(rng, 2, 4, 1 + t % 5, 2 + t % 7);
      const auto r = contrastive_feature_loss(b, cfg);
      double     worst = 0.0;
      for (std::size_t m = 0; m < b.size(); ++m) {
        const Mat &g = m < 2 ? r.grad_bona[m] : r.grad_spoof[m - 2];
        for (Eigen::Index e = 0; e < g.size(); ++e) {
          auto plus = b, minus = b;
          const double h = 1e-5;
          auto &p = m < 2 ? plus.bona[m] : plus.spoof[m - 2];
          auto &q = m < 2 ? minus.bona[m] : minus.spoof[m - 2];
          p.data()[e] += h;
          q.data()[e] -= h;
          const double fd = (contrastive_feature_loss(plus, cfg, false).loss -
                             contrastive_feature_loss(minus, cfg, false).loss) /
                            (2 * h);
          worst = std::max(worst, std::abs(fd - g.data()[e]) / std::max(1.0, std::abs(fd)));
        }
      }
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("contrastive gradient on the symmetric batch")
{
  Mat v(2, 2);
  v << 0.6, 0.8, 1.0, 0.0; // unit-norm frames
  CfBatch<double> same{{v, v}, {v, v}};
  const auto      r = contrastive_feature_loss(same, CfConfig{0.07, CfLevels::Sequence});
  for (const auto &g : r.grad_spoof)
    CHECK((g - r.grad_bona[0]).cwiseAbs().maxCoeff() < 1e-12);
  for (Eigen::Index n = 0; n < 2; ++n)
    CHECK(std::abs(r.grad_bona[0].row(n).dot(v.row(n))) < 1e-12);

  // Radial derivative of every member is zero.
  std::mt19937_64 rng(4);
  const auto      b = random_batch(rng, 2, 4, 3, 4);
  const auto      rb = contrastive_feature_loss(b, CfConfig{});
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(std::abs(rb.grad_bona[i].cwiseProduct(b.bona[i]).sum()) < 1e-10);
}

TEST_CASE("contrastive composition errors")
{
  Mat             v = Mat::Ones(2, 2);
  CfBatch<double> one{{v}, {v, v}};
  CHECK_THROWS_AS(contrastive_feature_loss(one, CfConfig{}), UsageError);
  CfBatch<double> ragged{{v, v}, {v, Mat::Ones(3, 2)}};
  CHECK_THROWS_AS(contrastive_feature_loss(ragged, CfConfig{}), UsageError);
  CHECK_THROWS_AS(cf_level(CfBatch<double>{{v, v}, {v, v}}, 0.0), UsageError);
}

TEST_CASE("float instantiation agrees with double")
{
  std::mt19937_64 rng(8);
  const auto      b = random_batch(rng, 2, 4, 3, 4);
  CfBatch<float>  bf;
  for (const auto &x : b.bona)
    bf.bona.push_back(x.cast<float>());
  for (const auto &x : b.spoof)
    bf.spoof.push_back(x.cast<float>());
  CHECK(contrastive_feature_loss(bf, CfConfig{}).loss ==
        doctest::Approx(contrastive_feature_loss(b, CfConfig{}).loss).epsilon(1e-4));
}

TEST_CASE("compose_batch")
{
  PairingIndex pairing{{"b1", {"b1__a", "b1__b", "b1__c", "b1__d"}},
                       {"b2", {"b2__a", "b2__b"}}};
  std::vector<std::string> pool;
  for (const auto &[id, s] : pairing)
    pool.insert(pool.end(), s.begin(), s.end());
  std::mt19937_64 rng(1);

  const BatchPlan p = compose_batch("b1", pairing, pool, 4, 1, Pairing::Paired, rng);
  CHECK(p.bona.size() == 2);
  CHECK(p.spoof.size() == 8);
  std::vector<std::string> ids;
  for (const auto &m : p.spoof)
    if (m.view == 0)
      ids.push_back(m.trial_id);
  std::sort(ids.begin(), ids.end());
  CHECK(ids == pairing.at("b1"));
  for (const auto &m : p.bona)
    CHECK(m.trial_id == "b1");

  CHECK_THROWS_AS(compose_batch("b1", pairing, pool, 2, 0, Pairing::Paired, rng), UsageError);
  CHECK_THROWS_AS(compose_batch("b1", pairing, pool, 0, 1, Pairing::Paired, rng), UsageError);
  CHECK_THROWS_AS(compose_batch("b2", pairing, pool, 4, 1, Pairing::Paired, rng), DataError);
  CHECK_THROWS_AS(compose_batch("zz", pairing, pool, 1, 1, Pairing::Paired, rng), DataError);

  int foreign = 0;
  for (int t = 0; t < 50; ++t) {
    const BatchPlan r = compose_batch("b1", pairing, pool, 4, 1, Pairing::Random, rng);
    CHECK(r.spoof.size() == 8);
    for (const auto &m : r.spoof)
      foreign += m.trial_id.starts_with("b2");
  }
  CHECK(foreign > 0);
}
