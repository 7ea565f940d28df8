#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>

#include "atlas/splat_map.hpp"

namespace atlas
{
/// Parameters of the chance-constrained collision model.
struct CollisionConfig
{
  double r_coll = 0.3;      // collision radius, m
  double sigma_rob = 0.1;   // robot position std dev, m
  double eta = 0.05;        // per-state collision tolerance
  double p_tol = 1e-3;      // locality tolerance
  double sigma_avg = 0.02;  // characteristic Gaussian std dev, m
  double rho = 200.0;       // Gaussians per m^3
  double n_total = 1e5;     // Gaussians in the global map

  void validate() const;
};

/// P(|Z + a e1| <= b) for Z ~ N(0, I_3), i.e. the standard normal mass of the
/// ball of radius b centred at distance a from the origin.
///
/// Conditioning on the first coordinate x leaves a 2D radial tail
/// exp(-r^2/2), which gives
///   prob(a, b) = Phi(a+b) - Phi(a-b)
///              - [exp(-(a-b)^2/2) - exp(-(a+b)^2/2)] / (sqrt(2 pi) a).
/// The bracket is evaluated as 2 exp(-(a^2+b^2)/2) sinh(ab) to stay stable
/// near a = 0, where the limit is the chi(3) CDF at b. In the far tail
/// (a - b > 1) the whole expression is factored by exp(-(a-b)^2/2) so the
/// result keeps full relative precision instead of cancelling to zero.
template <typename Scalar>
Scalar normal_ball_prob(Scalar a, Scalar b)
{
  using std::erf;
  using std::erfc;
  using std::exp;
  using std::sinh;
  using std::sqrt;
  constexpr Scalar kSqrt2 = std::numbers::sqrt2_v<Scalar>;
  const Scalar inv_sqrt_2pi = Scalar(1) / sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);

  if (!(b > Scalar(0)))
  {
    return Scalar(0);
  }
  a = std::abs(a);

  if (a < Scalar(1e-6))
  {
    // a -> 0 limit plus the O(a^2) term of the series.
    const Scalar chi3 = erf(b / kSqrt2) - Scalar(2) * b * exp(-b * b / Scalar(2)) * inv_sqrt_2pi;
    const Scalar second = -a * a * b * b * b * exp(-b * b / Scalar(2)) * inv_sqrt_2pi / Scalar(3);
    return std::clamp(chi3 + second, Scalar(0), Scalar(1));
  }

  const Scalar lo = a - b;
  const Scalar hi = a + b;
  if (lo > Scalar(37))
  {
    return Scalar(0);  // below the smallest normal double
  }
  if (lo > Scalar(1))
  {
    // Mills ratio M(x) = (1 - Phi(x)) / phi(x) for x > 0.
    // Past x = 20 both erfc and the density head for underflow, so use the
    // asymptotic series (relative error below 1e-13 there).
    auto mills = [&](Scalar x) {
      if (x < Scalar(20))
      {
        return Scalar(0.5) * erfc(x / kSqrt2) / (inv_sqrt_2pi * exp(-x * x / Scalar(2)));
      }
      const Scalar r = Scalar(1) / (x * x);
      Scalar term = Scalar(1);
      Scalar sum = Scalar(1);
      for (int k = 1; k <= 6; ++k)
      {
        term *= -Scalar(2 * k - 1) * r;
        sum += term;
      }
      return sum / x;
    };
    const Scalar damp = exp(-Scalar(2) * a * b);  // exp(-(hi^2 - lo^2) / 2)
    const Scalar bracket = mills(lo) - damp * mills(hi) - (Scalar(1) - damp) / a;
    const Scalar value = inv_sqrt_2pi * exp(-lo * lo / Scalar(2)) * bracket;
    return std::clamp(value, Scalar(0), Scalar(1));
  }

  const Scalar normal_mass = Scalar(0.5) * (erf(hi / kSqrt2) - erf(lo / kSqrt2));
  const Scalar disk_tail =
      Scalar(2) * exp(-(a * a + b * b) / Scalar(2)) * sinh(a * b) * inv_sqrt_2pi / a;
  return std::clamp(normal_mass - disk_tail, Scalar(0), Scalar(1));
}

/// Collision probability of an isotropic robot Gaussian with one map
/// Gaussian: R - G ~ N(mu_rob - mu_i, (sigma_rob^2 + sigma_i^2) I).
template <typename Scalar>
Scalar pairwise_collision_prob(const Eigen::Matrix<Scalar, 3, 1>& mu_rob, Scalar sigma_rob,
                               const Eigen::Matrix<Scalar, 3, 1>& mu_i, Scalar sigma_i,
                               Scalar r_coll)
{
  using std::sqrt;
  const Scalar s = sqrt(sigma_rob * sigma_rob + sigma_i * sigma_i);
  return normal_ball_prob<Scalar>((mu_rob - mu_i).norm() / s, r_coll / s);
}

inline double pairwise_collision_prob(const Vec3& mu_rob, double sigma_rob, const GaussianPoint& g,
                                      double r_coll)
{
  return pairwise_collision_prob<double>(mu_rob, sigma_rob, g.mu, g.sigma, r_coll);
}

/// Far-field tail bound on the collision probability with Gaussians whose
/// means lie at least `radius` from the robot:
///   max(0, N - 4/3 pi radius^3 rho) * prob(radius / s, r_coll / s),
/// s = sqrt(sigma_rob^2 + sigma_avg^2).
double far_field_bound(const CollisionConfig& cfg, double radius);

/// Smallest radius on a 1 mm grid whose far-field bound is <= p_tol, found
/// by binary search over the grid index (the bound is non-increasing).
double compute_r_loc(const CollisionConfig& cfg);

/// Grid step used by compute_r_loc, in meters.
inline constexpr double kRLocResolution = 1e-3;

}  // namespace atlas
