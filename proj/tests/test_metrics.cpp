#include <doctest.h>

#include "clvae/errors.hpp"
#include "clvae/metrics.hpp"
#include "oracles.hpp"

using namespace clvae;

namespace {

GaussianStats stats(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
  return {std::move(mean), std::move(cov), 10};
}

Eigen::MatrixXd random_spd(int d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

Eigen::VectorXd random_vec(int d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("fit_gaussian_stats") {
  Eigen::MatrixXd x(3, 2);
  x << 1, 2, 3, 4, 5, 9;
  const auto s = fit_gaussian_stats(x);
  CHECK(s.n == 3);
  CHECK(s.mean(0) == 3);
  CHECK(s.mean(1) == 5);
  CHECK(s.covariance(0, 0) == doctest::Approx(4.0));
  CHECK(s.covariance(0, 1) == doctest::Approx(7.0));
  CHECK(s.covariance(1, 1) == doctest::Approx(13.0));
  CHECK_THROWS_AS(fit_gaussian_stats(Eigen::MatrixXd(1, 2)), DataError);
}

TEST_CASE("psd_sqrt") {
  const Eigen::MatrixXd a = random_spd(6, 1);
  const Eigen::MatrixXd r = psd_sqrt(a);
  CHECK((r * r - a).norm() < 1e-9 * a.norm());
  CHECK((r - r.transpose()).norm() < 1e-12);
}

TEST_CASE("frechet_distance") {
  const Eigen::MatrixXd s = random_spd(8, 2);
  const Eigen::VectorXd m = random_vec(8, 3);
  SUBCASE("identity") { CHECK(std::abs(frechet_distance(stats(m, s), stats(m, s))) <= 1e-8); }
  SUBCASE("equal covariance reduces to the squared mean distance") {
    const Eigen::VectorXd m2 = random_vec(8, 4);
    const double expect = (m - m2).squaredNorm();
    CHECK(std::abs(frechet_distance(stats(m, s), stats(m2, s)) - expect) / expect <= 1e-6);
  }
  SUBCASE("diagonal closed form") {
    const Eigen::VectorXd d1 = random_vec(8, 5).array().square() + 0.1;
    const Eigen::VectorXd d2 = random_vec(8, 6).array().square() + 0.1;
    const Eigen::VectorXd m2 = random_vec(8, 7);
    const double expect = (m - m2).squaredNorm() + (d1.array().sqrt() - d2.array().sqrt()).square().sum();
    const double got = frechet_distance(stats(m, d1.asDiagonal()), stats(m2, d2.asDiagonal()));
    CHECK(std::abs(got - expect) / expect <= 1e-6);
  }
  SUBCASE("symmetric and nonnegative") {
    const Eigen::MatrixXd s2 = random_spd(8, 8);
    const Eigen::VectorXd m2 = random_vec(8, 9);
    const double ab = frechet_distance(stats(m, s), stats(m2, s2));
    const double ba = frechet_distance(stats(m2, s2), stats(m, s));
    CHECK(ab >= 0.0);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-8));
  }
  CHECK_THROWS_AS(frechet_distance(stats(m, s), stats(random_vec(3, 1), random_spd(3, 1))), ShapeError);
}

TEST_CASE("fid") {
  const PerceptualBackbone bb(7);
  Rng rng(10);
  Tensor real(24, 3, 16, 16);
  for (auto& v : real.vec()) v = rng.uniform(0.2, 0.6);
  CHECK(std::abs(fid(real, real, bb)) <= 1e-8);
  double prev = 0;
  for (double shift : {0.1, 0.2, 0.3}) {
    Tensor g = real;
    for (auto& v : g.vec()) v += shift;
    const double f = fid(real, g, bb);
    CHECK(f > prev);
    prev = f;
  }
  Tensor four(24, 4, 16, 16);
  for (auto& v : four.vec()) v = rng.uniform();
  Tensor four_same = four;
  for (std::size_t i = 0; i < 24; ++i)
    for (std::size_t j = 0; j < 256; ++j) four_same[(i * 4 + 3) * 256 + j] = 0.0;
  CHECK(fid(four, four_same, bb) == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(fid(real, four, bb) >= 0.0);
  CHECK_THROWS(fid(Tensor(4, 1, 16, 16), Tensor(4, 1, 16, 16), bb));
}

TEST_CASE("roc_curve") {
  using L = Label;
  SUBCASE("perfect and inverted") {
    const auto good = roc_curve({0.1, 0.2, 0.8, 0.9}, {L::Normal, L::Normal, L::Anomaly, L::Anomaly});
    CHECK(good.auc == 1.0);
    const auto bad = roc_curve({0.9, 0.8, 0.2, 0.1}, {L::Normal, L::Normal, L::Anomaly, L::Anomaly});
    CHECK(bad.auc == 0.0);
  }
  SUBCASE("all tied is one diagonal step") {
    const auto c = roc_curve({1, 1, 1}, {L::Normal, L::Anomaly, L::Normal});
    CHECK(c.auc == 0.5);
    REQUIRE(c.points.size() == 2);
    CHECK(c.points.front().fpr == 0.0);
    CHECK(c.points.back().tpr == 1.0);
    CHECK(c.points.back().fpr == 1.0);
  }
  SUBCASE("agrees exactly with Mann-Whitney on every tied list up to length 6") {
    long cases = 0;
    for (int n = 2; n <= 6; ++n) {
      int pow3 = 1;
      for (int i = 0; i < n; ++i) pow3 *= 3;
      for (int code = 0; code < pow3; ++code) {
        std::vector<double> s(n);
        for (int i = 0, c = code; i < n; ++i, c /= 3) s[i] = c % 3;
        for (int mask = 1; mask < (1 << n) - 1; ++mask) {
          std::vector<L> l(n);
          for (int i = 0; i < n; ++i) l[i] = (mask >> i) & 1 ? L::Anomaly : L::Normal;
          const double a = roc_curve(s, l).auc;
          if (a != oracle::mann_whitney(s, l)) FAIL_CHECK("mismatch at n=", n, " code=", code, " mask=", mask);
          ++cases;
        }
      }
    }
    CHECK(cases > 10000);
  }
  SUBCASE("csv") {
    const auto c = roc_curve({0.5, 0.25}, {L::Anomaly, L::Normal});
    CHECK(roc_csv(c) == "threshold,fpr,tpr\ninf,0,0\n0.5,0,1\n0.25,1,1\n");
  }
  CHECK_THROWS_AS(roc_curve({1, 2}, {L::Normal, L::Normal}), DataError);
  CHECK_THROWS_AS(roc_curve({1}, {L::Normal, L::Anomaly}), DataError);
  CHECK_THROWS_AS(roc_curve({NAN, 1}, {L::Normal, L::Anomaly}), NumericalError);
}

TEST_CASE("rates and accuracy") {
  using L = Label;
  const std::vector<L> truth{L::Anomaly, L::Anomaly, L::Normal, L::Normal, L::Normal};
  const std::vector<L> pred{L::Anomaly, L::Normal, L::Anomaly, L::Normal, L::Normal};
  const auto r = tpr_fpr(pred, truth);
  CHECK(r.tpr == 0.5);
  CHECK(r.fpr == doctest::Approx(1.0 / 3));
  CHECK(accuracy(pred, truth) == 0.6);
  CHECK_THROWS_AS(tpr_fpr(pred, std::vector<L>(5, L::Normal)), DataError);
  CHECK_THROWS_AS(tpr_fpr(pred, std::vector<L>(5, L::Anomaly)), DataError);
  CHECK_THROWS_AS(accuracy({}, {}), DataError);
}
