#include <algorithm>
#include <boost/math/special_functions/bessel.hpp>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "retedit/vmf.hpp"

using namespace retedit;
using namespace retedit::vmf;

namespace {

// Half-integer closed forms: I_{1/2}(z) = sqrt(2/(pi z)) sinh z,
// I_{3/2}(z) = sqrt(2/(pi z)) (cosh z - sinh z / z), so the d = 3 ratio is
// coth z - 1/z.
double ratio_d3(double z) { return 1.0 / std::tanh(z) - 1.0 / z; }

// Power series I_nu(x) = sum (x/2)^{2k+nu} / (k! Gamma(k+nu+1)), for small x,
// accumulated relative to the k = 0 term so tiny values do not underflow.
double log_series_bessel_i(double nu, double x) {
  const double t0 = nu * std::log(0.5 * x) - std::lgamma(nu + 1.0);
  double sum = 0.0;
  for (int k = 0; k < 80; ++k)
    sum += std::exp((2.0 * k + nu) * std::log(0.5 * x) - std::lgamma(k + 1.0) - std::lgamma(k + nu + 1.0) - t0);
  return t0 + std::log(sum);
}
double series_bessel_i(double nu, double x) { return std::exp(log_series_bessel_i(nu, x)); }

Vector random_unit(int d, Rng& rng) {
  Vector g(d);
  for (int i = 0; i < d; ++i) g[i] = rng.normal();
  return g.normalized();
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double dmax = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    dmax = std::max(dmax, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return dmax;
}

}  // namespace

TEST_CASE("bessel ratio matches closed forms") {
  CHECK(bessel_ratio(3, 2.0) == doctest::Approx(ratio_d3(2.0)).epsilon(1e-13));
  CHECK(ratio_d3(2.0) == doctest::Approx(0.537314).epsilon(1e-6));
  CHECK(std::isinf(log_bessel_ratio(3, 0.0)));
  CHECK(log_bessel_ratio(3, 0.0) < 0);
  CHECK(bessel_ratio(3, 0.0) == 0.0);
  CHECK(std::abs(bessel_ratio(3, 1000.0) - 0.999) < 1e-5);
  // Large-kappa asymptote 1 - (d-1)/(2 kappa).
  for (int d : {3, 8, 64}) {
    const double k = 1e4 * d;
    CHECK(std::abs(bessel_ratio(d, k) - (1.0 - (d - 1.0) / (2.0 * k))) < 1e-6);
  }
  CHECK_THROWS(log_bessel_ratio(1, 1.0));
  CHECK_THROWS(log_bessel_ratio(3, -1.0));
}

TEST_CASE("bessel ratio agrees with an independent library across regimes") {
  for (int d : {2, 3, 4, 8, 17, 64, 256, 1024}) {
    for (double k : {1e-6, 0.01, 0.5, 1.0, 10.0, 100.0, 500.0, 2000.0, 1e4}) {
      const double nu = 0.5 * d - 1.0;
      const double got = log_bessel_ratio(d, k);
      double expected;
      if (k <= 10.0) {
        expected = log_series_bessel_i(nu + 1.0, k) - log_series_bessel_i(nu, k);
      } else if (k < 500.0) {
        expected = std::log(boost::math::cyl_bessel_i(nu + 1.0, k) / boost::math::cyl_bessel_i(nu, k));
      } else {
        expected = detail::log_bessel_ratio_cf(nu, k);
      }
      CAPTURE(d);
      CAPTURE(k);
      CHECK(got == doctest::Approx(expected).epsilon(1e-10));
    }
  }
}

TEST_CASE("asymptotic and continued-fraction regimes agree near the switch") {
  for (int d : {2, 3, 8, 40, 41, 64, 1024}) {
    const double nu = 0.5 * d - 1.0;
    for (double f : {60.0, 100.0, 150.0, 400.0}) {
      const double k = f * d;
      CAPTURE(d);
      CAPTURE(k);
      CHECK(detail::log_bessel_ratio_asymptotic(nu, k) ==
            doctest::Approx(detail::log_bessel_ratio_cf(nu, k)).epsilon(1e-11).scale(1e-6));
    }
  }
}

TEST_CASE("log_bessel_i is stable and matches references") {
  for (double nu : {0.0, 0.5, 1.5, 7.0, 31.0}) {
    for (double x : {0.1, 1.0, 5.0, 30.0}) {
      CHECK(log_bessel_i(nu, x) == doctest::Approx(std::log(series_bessel_i(nu, x))).epsilon(1e-11));
    }
  }
  CHECK(log_bessel_i(0.5, 700.0) ==
        doctest::Approx(std::log(std::sqrt(2.0 / (std::numbers::pi * 700.0))) + 700.0 +
                        std::log1p(-std::exp(-1400.0)) - std::log(2.0))
            .epsilon(1e-12));
  // Far beyond double overflow of I_nu itself.
  const double big = log_bessel_i(31.0, 1e5);
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(1e5 - 0.5 * std::log(2 * std::numbers::pi * 1e5)).epsilon(1e-6));
  // Series and asymptotic expressions of log I agree where both are accurate.
  for (double nu : {0.0, 1.0, 25.0, 200.0}) {
    const double x = 250.0 * (nu + 1.0);
    CHECK(detail::log_bessel_i_series(nu, x) ==
          doctest::Approx(detail::log_bessel_i_asymptotic(nu, x)).epsilon(1e-12));
  }
}

TEST_CASE("c_kappa spot values") {
  CHECK(c_kappa(3, 2.0) == doctest::Approx(0.5373147207275).epsilon(1e-10));
  const double i1 = series_bessel_i(1.0, 1.0), i0 = series_bessel_i(0.0, 1.0);
  CHECK(i1 == doctest::Approx(0.565159).epsilon(1e-6));
  CHECK(i0 == doctest::Approx(1.266066).epsilon(1e-6));
  CHECK(c_kappa(2, 1.0) == doctest::Approx(0.5 * i1 / i0).epsilon(1e-12));
  CHECK(c_kappa(2, 1.0) == doctest::Approx(0.223202).epsilon(1e-5));
  CHECK(c_kappa(5, 0.0) == 0.0);
}

TEST_CASE("log_norm_const") {
  CHECK(log_norm_const(3, 1.0) ==
        doctest::Approx(std::log(1.0 / (4.0 * std::numbers::pi * std::sinh(1.0)))).epsilon(1e-12));
  // 1 / (4 pi sinh 1) = 0.0677139...
  CHECK(std::abs(std::exp(log_norm_const(3, 1.0)) - 0.0677139) < 1e-7);
  CHECK(log_norm_const(3, 0.0) == doctest::Approx(-std::log(4.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(log_norm_const(3, 1e-8) == doctest::Approx(-std::log(4.0 * std::numbers::pi)).epsilon(1e-7));
  CHECK(log_norm_const(2, 0.0) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(std::isfinite(log_norm_const(64, 500.0)));
  CHECK(std::isfinite(log_norm_const(1024, 1e4)));

  // Monte-Carlo normalization over uniform points on S^2.
  Rng rng(5);
  const double k = 2.0;
  Vector mu = random_unit(3, rng);
  const double lc = log_norm_const(3, k);
  double sum = 0.0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) sum += std::exp(lc + k * mu.dot(random_unit(3, rng)));
  const double integral = 4.0 * std::numbers::pi * sum / n;
  CHECK(std::abs(integral - 1.0) < 0.01);
}

TEST_CASE("log_density") {
  Rng rng(1);
  auto mu = UnitVector::normalize(random_unit(3, rng));
  VmfDistribution dist(mu, 1.0);
  CHECK(log_density(mu, dist) ==
        doctest::Approx(std::log(1.0 / (4.0 * std::numbers::pi * std::sinh(1.0))) + 1.0).epsilon(1e-12));
  auto v = UnitVector::normalize(random_unit(3, rng));
  auto neg = UnitVector::normalize(-v.values());
  CHECK(log_density(v, dist) - log_density(neg, dist) == doctest::Approx(2.0 * mu.dot(v)).epsilon(1e-12));
  VmfDistribution flat(mu, 0.0);
  CHECK(log_density(v, flat) == doctest::Approx(log_density(neg, flat)));
  auto v4 = UnitVector::normalize(random_unit(4, rng));
  CHECK_THROWS(log_density(v4, dist));
}

TEST_CASE("kl closed form and properties") {
  Vector e1 = Vector::Zero(3), e2 = Vector::Zero(2), f2 = Vector::Zero(2);
  e1[0] = 1;
  e2[0] = 1;
  f2[1] = 1;
  CHECK(kl(e1, e1, 3, 2.0) == 0.0);
  CHECK(kl(e1, Vector(-e1), 3, 2.0) == doctest::Approx(2.149257).epsilon(1e-6));
  CHECK(kl(e2, f2, 2, 1.0) == doctest::Approx(0.446404).epsilon(1e-5));
  CHECK_THROWS(kl(Vector(1.01 * e1), e1, 3, 2.0));

  Rng rng(9);
  for (int d : {2, 3, 8, 64}) {
    for (double k : {0.0, 1.0, 10.0, 500.0}) {
      for (int t = 0; t < 20; ++t) {
        Vector a = random_unit(d, rng), b = random_unit(d, rng);
        const double ab = kl(a, b, d, k), ba = kl(b, a, d, k);
        CHECK(ab >= 0.0);
        CHECK(ab == doctest::Approx(ba).epsilon(1e-14));
        CHECK(ab <= 4.0 * c_kappa(d, k));
      }
    }
  }
}

TEST_CASE("bessel ratio is increasing in kappa and decreasing in d") {
  const std::vector<int> ds = {2, 3, 4, 8, 16, 64, 256, 1024};
  const std::vector<double> ks = {0.01, 0.1, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0, 5000.0, 1e4};
  for (int d : ds)
    for (std::size_t i = 1; i < ks.size(); ++i) CHECK(log_bessel_ratio(d, ks[i]) > log_bessel_ratio(d, ks[i - 1]));
  for (double k : ks)
    for (std::size_t i = 1; i < ds.size(); ++i) CHECK(log_bessel_ratio(ds[i], k) < log_bessel_ratio(ds[i - 1], k));
}

TEST_CASE("sampler: uniform, mean direction, and concentration") {
  const int n = 100'000;
  {
    Rng rng(1);
    auto mu = UnitVector::normalize(random_unit(3, rng));
    VmfDistribution flat(mu, 0.0);
    Vector mean = Vector::Zero(3);
    for (int i = 0; i < n; ++i) mean += sample(flat, rng).values();
    CHECK((mean / n).norm() < 0.02);
  }
  {
    Rng rng(2);
    auto mu = UnitVector::normalize(random_unit(3, rng));
    VmfDistribution dist(mu, 2.0);
    Vector mean = Vector::Zero(3);
    for (int i = 0; i < n; ++i) {
      auto v = sample(dist, rng);
      CHECK_MESSAGE(std::abs(v.values().norm() - 1.0) < 1e-12, "sample off the sphere");
      mean += v.values();
    }
    mean /= n;
    Vector expected = 0.5373147207 * mu.values();
    for (int i = 0; i < 3; ++i) CHECK(std::abs(mean[i] - expected[i]) < 0.01);
  }
  {
    Rng rng(3);
    auto mu = UnitVector::normalize(random_unit(3, rng));
    VmfDistribution sharp(mu, 1e6);
    int close = 0;
    const int m = 20'000;
    for (int i = 0; i < m; ++i) close += sample(sharp, rng).dot(mu) > 0.99999;
    CHECK(close >= 0.999 * m);
  }
}

TEST_CASE("sampling is reproducible from a seed") {
  Rng a(77), b(77);
  Rng r(1);
  VmfDistribution dist(UnitVector::normalize(random_unit(16, r)), 50.0);
  for (int i = 0; i < 100; ++i) CHECK(sample(dist, a).values() == sample(dist, b).values());
}

TEST_CASE("reparameterized sample: gradient matches finite differences") {
  Rng rng(4);
  const int d = 8;
  Vector mu = random_unit(d, rng);
  Vector c = Vector::NullaryExpr(d, [&] { return rng.normal(); });
  auto noise = draw_reparam_noise(d, 50.0, rng);
  const Vector z = noise.frame_point();
  auto f = [&](const Vector& m) { return householder_apply(m, z).dot(c); };
  Vector analytic = householder_vjp(mu, z, c);
  const double h = 1e-6;
  Vector numeric(d);
  for (int i = 0; i < d; ++i) {
    Vector p = mu, m = mu;
    p[i] += h;
    m[i] -= h;
    numeric[i] = (f(p) - f(m)) / (2 * h);
  }
  CHECK((analytic - numeric).norm() / numeric.norm() < 1e-5);

  // The reflection maps e1 to mu, so <v, mu> = w exactly.
  VmfDistribution dist(UnitVector::normalize(mu), 50.0);
  Rng r2(8);
  auto s = sample_reparam(dist, r2);
  CHECK(s.v.dot(dist.mu) == doctest::Approx(s.noise.w).epsilon(1e-12));

  // kappa = 0: the sample is still a bounded, differentiable function of mu.
  auto flat_noise = draw_reparam_noise(d, 0.0, rng);
  Vector g = householder_vjp(mu, flat_noise.frame_point(), c);
  CHECK(g.allFinite());
}

TEST_CASE("reparameterized and direct samplers share the same law") {
  Rng rng(10);
  const int d = 5;
  VmfDistribution dist(UnitVector::normalize(random_unit(d, rng)), 3.0);
  const int n = 100'000;
  std::vector<double> a, b;
  a.reserve(n);
  b.reserve(n);
  Rng ra(100), rb(200);
  for (int i = 0; i < n; ++i) {
    a.push_back(sample(dist, ra).dot(dist.mu));
    b.push_back(sample_reparam(dist, rb).v.dot(dist.mu));
  }
  const double crit = 1.628 * std::sqrt(2.0 / n);  // alpha = 0.01
  CHECK(ks_statistic(a, b) < crit);
  // Also check the full vector law on one coordinate orthogonal to mu.
  Vector t = random_unit(d, rng);
  t -= t.dot(dist.mu.values()) * dist.mu.values();
  t.normalize();
  std::vector<double> pa, pb;
  for (int i = 0; i < 20000; ++i) {
    pa.push_back(sample(dist, ra).values().dot(t));
    pb.push_back(sample_reparam(dist, rb).v.values().dot(t));
  }
  CHECK(ks_statistic(pa, pb) < 1.628 * std::sqrt(2.0 / 20000));
}

TEST_CASE("Monte-Carlo KL agrees with the closed form") {
  Rng rng(12);
  for (int d : {2, 3, 8}) {
    for (double k : {1.0, 10.0}) {
      auto mu1 = UnitVector::normalize(random_unit(d, rng));
      auto mu2 = UnitVector::normalize(random_unit(d, rng));
      VmfDistribution p(mu1, k), q(mu2, k);
      const int n = 20000;
      double s = 0, s2 = 0;
      for (int i = 0; i < n; ++i) {
        auto v = sample(p, rng);
        const double x = log_density(v, p) - log_density(v, q);
        s += x;
        s2 += x * x;
      }
      const double mean = s / n;
      const double se = std::sqrt(std::max(0.0, s2 / n - mean * mean) / n);
      CHECK(std::abs(mean - kl(mu1, mu2, d, k)) <= 3.0 * se + 1e-12);
    }
  }
}
