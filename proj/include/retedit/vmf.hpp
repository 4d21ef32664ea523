#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "retedit/rng.hpp"

// von Mises-Fisher numerics on the unit sphere S^{d-1}.
//
// Two different constants show up in the literature under the same name:
//   c_kappa(d, k)        = k I_{d/2}(k) / (2 I_{d/2-1}(k)), the coefficient that
//                          turns KL between equal-concentration vMFs into a
//                          squared Euclidean distance;
//   log_norm_const(d, k) = log of the density normalizer
//                          k^{d/2-1} / ((2 pi)^{d/2} I_{d/2-1}(k)).
namespace retedit::vmf {

using Vector = Eigen::VectorXd;

inline constexpr double kUnitTolerance = 1e-9;
inline constexpr double kDefaultKappa = 500.0;
inline constexpr int kMaxRejections = 10000;

class UnitVector {
 public:
  /// Rescales a non-zero vector to unit norm.
  static UnitVector normalize(const Vector& v);
  /// Accepts v only if | ||v|| - 1 | <= tol.
  static UnitVector checked(const Vector& v, double tol = kUnitTolerance);

  const Vector& values() const { return values_; }
  int dim() const { return static_cast<int>(values_.size()); }
  double dot(const UnitVector& other) const { return values_.dot(other.values_); }

 private:
  explicit UnitVector(Vector v) : values_(std::move(v)) {}
  Vector values_;
};

struct VmfDistribution {
  VmfDistribution(UnitVector mean, double concentration);

  UnitVector mu;
  double kappa;
  int dim() const { return mu.dim(); }
};

/// log I_nu(x) for nu >= 0, x >= 0; finite for arbitrarily large x.
double log_bessel_i(double nu, double x);

/// log(I_{d/2}(k) / I_{d/2-1}(k)). Returns -infinity at k = 0.
double log_bessel_ratio(int d, double kappa);
/// I_{d/2}(k) / I_{d/2-1}(k), the mean resultant length of vMF(., k) on S^{d-1}.
double bessel_ratio(int d, double kappa);

double c_kappa(int d, double kappa);
double log_norm_const(int d, double kappa);
double log_density(const UnitVector& v, const VmfDistribution& dist);

/// Closed-form KL(vMF(mu1, k) || vMF(mu2, k)) = c_kappa * ||mu1 - mu2||^2.
double kl(const UnitVector& mu1, const UnitVector& mu2, int d, double kappa);
/// Overload that validates raw vectors against the unit-norm tolerance.
double kl(const Vector& mu1, const Vector& mu2, int d, double kappa);

/// Draws w = <v, mu> from the vMF marginal by envelope rejection.
double sample_w(int d, double kappa, Rng& rng);

/// Exact draw from vMF(mu, kappa).
UnitVector sample(const VmfDistribution& dist, Rng& rng);

/// Noise for a reparameterized draw, expressed in the frame where the mean is
/// e1: frame_point = (w, sqrt(1 - w^2) * tangent), tangent uniform on S^{d-2}.
struct ReparamNoise {
  double w = 1.0;
  Vector tangent;
  Vector frame_point() const;
};

ReparamNoise draw_reparam_noise(int d, double kappa, Rng& rng);

/// Householder reflection H(mu) with H(mu) e1 = mu for unit mu, applied to z.
Vector householder_apply(const Vector& mu, const Vector& z);
/// Vector-Jacobian product of householder_apply with respect to mu.
Vector householder_vjp(const Vector& mu, const Vector& z, const Vector& grad_out);

struct ReparamSample {
  UnitVector v;
  ReparamNoise noise;
};

/// v = H(mu) (w e1 + sqrt(1 - w^2) tangent); differentiable in mu through
/// householder_vjp with the noise held fixed.
ReparamSample sample_reparam(const VmfDistribution& dist, Rng& rng);

namespace detail {
// Exposed for cross-checking the two evaluation regimes.
double log_bessel_ratio_cf(double nu, double x);
double log_bessel_ratio_asymptotic(double nu, double x);
double log_bessel_i_series(double nu, double x);
double log_bessel_i_asymptotic(double nu, double x);
}  // namespace detail

}  // namespace retedit::vmf
