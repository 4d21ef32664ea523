#include "retedit/vmf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace retedit::vmf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Above this kappa/d the continued fraction needs O(kappa) terms; asymptotic
// expansions are accurate to machine precision there.
constexpr double kAsymptoticRatio = 100.0;
// log I_nu at large argument: Hankel expansion below this order, uniform
// (Debye) expansion in the order above it.
constexpr double kDebyeMinOrder = 20.0;

void check_args(int d, double kappa) {
  if (d < 2) throw std::invalid_argument("vMF dimension must be >= 2, got " + std::to_string(d));
  if (!(kappa >= 0.0) || !std::isfinite(kappa))
    throw std::invalid_argument("vMF concentration must be finite and >= 0");
}

bool use_asymptotic(double nu, double x) { return x > kAsymptoticRatio * (2.0 * nu + 2.0); }

// log of sum_k (-1)^k a_k(nu) / x^k, the Hankel series for e^{-x} sqrt(2 pi x) I_nu(x).
double log_hankel_sum(double nu, double x) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 100000; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = -term * (mu - odd * odd) / (8.0 * k * x);
    // Past k ~ nu the series diverges; stop at its smallest term.
    if (k > nu + 1.0 && std::abs(next) >= std::abs(term)) break;
    term = next;
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return std::log(sum);
}

double debye_series(double nu, double t) {
  const double t2 = t * t;
  const double u1 = t * (3.0 - 5.0 * t2) / 24.0;
  const double u2 = t2 * (81.0 + t2 * (-462.0 + t2 * 385.0)) / 1152.0;
  const double u3 = t * t2 * (30375.0 + t2 * (-369603.0 + t2 * (765765.0 - t2 * 425425.0))) / 414720.0;
  const double u4 =
      t2 * t2 *
      (4465125.0 + t2 * (-94121676.0 + t2 * (349922430.0 + t2 * (-446185740.0 + t2 * 185910725.0)))) /
      39813120.0;
  const double inv = 1.0 / nu;
  return 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * u4)));
}

}  // namespace

namespace detail {

double log_bessel_i_series(double nu, double x) {
  if (x == 0.0) return nu == 0.0 ? 0.0 : -kInf;
  const double log_half_x = std::log(0.5 * x);
  std::vector<double> terms;
  double max_term = -kInf;
  for (long k = 0;; ++k) {
    const double kd = static_cast<double>(k);
    const double t = (2.0 * kd + nu) * log_half_x - std::lgamma(kd + 1.0) - std::lgamma(kd + nu + 1.0);
    terms.push_back(t);
    max_term = std::max(max_term, t);
    // Terms grow until k ~ x/2 and then decay super-geometrically.
    if (kd > 0.5 * x && t < max_term - 40.0) break;
  }
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - max_term);
  return max_term + std::log(acc);
}

double log_bessel_i_asymptotic(double nu, double x) {
  if (nu < kDebyeMinOrder)
    return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + log_hankel_sum(nu, x);
  const double z = x / nu;
  const double root = std::sqrt(1.0 + z * z);
  const double eta = root + std::log(z / (1.0 + root));
  const double t = 1.0 / root;
  return -0.5 * std::log(2.0 * std::numbers::pi * nu) + nu * eta - 0.25 * std::log1p(z * z) +
         std::log(debye_series(nu, t));
}

double log_bessel_ratio_cf(double nu, double x) {
  // I_{nu+1}(x)/I_nu(x) = 1/(b1 + 1/(b2 + ...)), b_k = 2(nu + k)/x,
  // evaluated with the modified Lentz algorithm.
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double f = tiny;
  double c = f;
  double d = 0.0;
  for (long k = 1; k < 100'000'000; ++k) {
    const double b = 2.0 * (nu + static_cast<double>(k)) / x;
    d = b + d;
    if (d == 0.0) d = tiny;
    c = b + 1.0 / c;
    if (c == 0.0) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < eps) return std::log(f);
  }
  throw std::runtime_error("Bessel ratio continued fraction did not converge");
}

double log_bessel_ratio_asymptotic(double nu, double x) {
  // The e^x / sqrt(2 pi x) prefactors cancel exactly; differencing two Debye
  // expansions instead would lose ~log10(x) digits.
  return log_hankel_sum(nu + 1.0, x) - log_hankel_sum(nu, x);
}

}  // namespace detail

// ---------------------------------------------------------------------------

UnitVector UnitVector::normalize(const Vector& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("cannot normalize a zero or non-finite vector");
  return UnitVector(v / n);
}

UnitVector UnitVector::checked(const Vector& v, double tol) {
  if (v.size() < 2) throw std::invalid_argument("unit vectors need dimension >= 2");
  const double n = v.norm();
  if (!(std::abs(n - 1.0) <= tol))
    throw std::invalid_argument("vector is not unit norm (norm = " + std::to_string(n) + ")");
  return UnitVector(v);
}

VmfDistribution::VmfDistribution(UnitVector mean, double concentration)
    : mu(std::move(mean)), kappa(concentration) {
  check_args(mu.dim(), kappa);
}

double log_bessel_i(double nu, double x) {
  if (nu < 0.0 || x < 0.0) throw std::invalid_argument("log_bessel_i needs nu >= 0 and x >= 0");
  if (use_asymptotic(nu, x)) return detail::log_bessel_i_asymptotic(nu, x);
  return detail::log_bessel_i_series(nu, x);
}

double log_bessel_ratio(int d, double kappa) {
  check_args(d, kappa);
  if (kappa == 0.0) return -kInf;
  const double nu = 0.5 * d - 1.0;
  if (use_asymptotic(nu, kappa)) return detail::log_bessel_ratio_asymptotic(nu, kappa);
  return detail::log_bessel_ratio_cf(nu, kappa);
}

double bessel_ratio(int d, double kappa) { return std::exp(log_bessel_ratio(d, kappa)); }

double c_kappa(int d, double kappa) {
  const double lr = log_bessel_ratio(d, kappa);
  if (kappa == 0.0) return 0.0;
  return 0.5 * kappa * std::exp(lr);
}

double log_norm_const(int d, double kappa) {
  check_args(d, kappa);
  const double half_d = 0.5 * d;
  if (kappa == 0.0)
    return -(std::log(2.0) + half_d * std::log(std::numbers::pi) - std::lgamma(half_d));
  return (half_d - 1.0) * std::log(kappa) - half_d * std::log(2.0 * std::numbers::pi) -
         log_bessel_i(half_d - 1.0, kappa);
}

double log_density(const UnitVector& v, const VmfDistribution& dist) {
  if (v.dim() != dist.dim())
    throw std::invalid_argument("dimension mismatch: v has " + std::to_string(v.dim()) + ", mu has " +
                                std::to_string(dist.dim()));
  return log_norm_const(dist.dim(), dist.kappa) + dist.kappa * dist.mu.dot(v);
}

double kl(const UnitVector& mu1, const UnitVector& mu2, int d, double kappa) {
  if (mu1.dim() != mu2.dim() || mu1.dim() != d)
    throw std::invalid_argument("kl: dimension mismatch");
  const double sq = (mu1.values() - mu2.values()).squaredNorm();
  return c_kappa(d, kappa) * sq;
}

double kl(const Vector& mu1, const Vector& mu2, int d, double kappa) {
  return kl(UnitVector::checked(mu1), UnitVector::checked(mu2), d, kappa);
}

// ---------------------------------------------------------------------------
// Sampling

double sample_w(int d, double kappa, Rng& rng) {
  check_args(d, kappa);
  const double dm1 = d - 1.0;
  // b = (-2k + sqrt(4k^2 + (d-1)^2)) / (d-1), written without cancellation.
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  // 1 - x0^2 = 4b / (1+b)^2
  const double c = kappa * x0 + dm1 * std::log(4.0 * b / ((1.0 + b) * (1.0 + b)));
  for (int i = 0; i < kMaxRejections; ++i) {
    const double z = rng.beta(0.5 * dm1, 0.5 * dm1);
    const double w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double u = rng.uniform_open();
    if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) return std::clamp(w, -1.0, 1.0);
  }
  throw std::runtime_error("vMF w-marginal sampler exceeded the rejection cap");
}

namespace {

Vector uniform_sphere(int dim, Rng& rng) {
  Vector g(dim);
  for (;;) {
    for (int i = 0; i < dim; ++i) g[i] = rng.normal();
    const double n = g.norm();
    if (n > 1e-300) return g / n;
  }
}

}  // namespace

UnitVector sample(const VmfDistribution& dist, Rng& rng) {
  const int d = dist.dim();
  const Vector& mu = dist.mu.values();
  const double w = sample_w(d, dist.kappa, rng);
  // Tangent direction: project an isotropic draw onto the complement of mu.
  Vector tangent;
  for (;;) {
    Vector g(d);
    for (int i = 0; i < d; ++i) g[i] = rng.normal();
    g -= g.dot(mu) * mu;
    const double n = g.norm();
    if (n > 1e-12) {
      tangent = g / n;
      break;
    }
  }
  const double s = std::sqrt(std::max(0.0, 1.0 - w * w));
  return UnitVector::normalize(w * mu + s * tangent);
}

Vector ReparamNoise::frame_point() const {
  const auto d = tangent.size() + 1;
  Vector z(d);
  z[0] = w;
  z.tail(d - 1) = std::sqrt(std::max(0.0, 1.0 - w * w)) * tangent;
  return z;
}

ReparamNoise draw_reparam_noise(int d, double kappa, Rng& rng) {
  ReparamNoise noise;
  noise.w = sample_w(d, kappa, rng);
  if (d == 2) {
    noise.tangent = Vector::Constant(1, rng.uniform() < 0.5 ? -1.0 : 1.0);
  } else {
    noise.tangent = uniform_sphere(d - 1, rng);
  }
  return noise;
}

Vector householder_apply(const Vector& mu, const Vector& z) {
  Vector u = -mu;
  u[0] += 1.0;
  const double n = u.squaredNorm();
  if (n < 1e-300) return z;
  return z - (2.0 * u.dot(z) / n) * u;
}

Vector householder_vjp(const Vector& mu, const Vector& z, const Vector& grad_out) {
  Vector u = -mu;
  u[0] += 1.0;
  const double n = u.squaredNorm();
  if (n < 1e-300) return Vector::Zero(mu.size());
  const double s = u.dot(z);
  const double gu = grad_out.dot(u);
  // v = z - 2 u s / n with u = e1 - mu.
  return 2.0 * (grad_out * (s / n) + z * (gu / n) - u * (2.0 * s * gu / (n * n)));
}

ReparamSample sample_reparam(const VmfDistribution& dist, Rng& rng) {
  auto noise = draw_reparam_noise(dist.dim(), dist.kappa, rng);
  auto v = UnitVector::normalize(householder_apply(dist.mu.values(), noise.frame_point()));
  return ReparamSample{std::move(v), std::move(noise)};
}

}  // namespace retedit::vmf
