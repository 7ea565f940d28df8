// Independent reference implementations used by the tests. They favour
// plainness over speed.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "atlas/continuous_planner.hpp"
#include "atlas/discrete_planner.hpp"
#include "atlas/splat_map.hpp"
#include "atlas/types.hpp"

namespace oracle
{
using atlas::MatX;
using atlas::Vec2;
using atlas::Vec3;
using atlas::VecX;

/// Composite Simpson rule with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double lo, double hi, int n = 4000)
{
  const double h = (hi - lo) / n;
  double s = f(lo) + f(hi);
  for (int i = 1; i < n; ++i)
  {
    s += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  }
  return s * h / 3.0;
}

inline double std_normal_pdf(double x)
{
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Ball probability by integrating over the first coordinate: the other two
/// coordinates fall inside the disc of radius sqrt(b^2 - (x - a)^2) with
/// chi-square(2) probability 1 - exp(-rho^2 / 2).
inline double ball_prob_quadrature(double a, double b)
{
  auto f = [&](double x) {
    const double rho2 = std::max(0.0, b * b - (x - a) * (x - a));
    return std_normal_pdf(x) * (1.0 - std::exp(-0.5 * rho2));
  };
  return simpson(f, a - b, a + b, 20000);
}

/// chi(3) CDF by integrating its density.
inline double chi3_cdf_quadrature(double b)
{
  auto pdf = [](double r) { return std::sqrt(2.0 / std::numbers::pi) * r * r * std::exp(-0.5 * r * r); };
  return simpson(pdf, 0.0, b, 20000);
}

/// Samples of N(0, I_3).
inline std::vector<Vec3> normal_samples(size_t n, uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vec3> out(n);
  for (Vec3& z : out)
  {
    z = Vec3(normal(rng), normal(rng), normal(rng));
  }
  return out;
}

/// Fraction of samples inside the ball of radius b centred at a * e1.
inline double ball_prob_monte_carlo(const std::vector<Vec3>& samples, double a, double b)
{
  size_t hits = 0;
  const double b2 = b * b;
  for (const Vec3& z : samples)
  {
    const double dx = z.x() - a;
    hits += dx * dx + z.y() * z.y() + z.z() * z.z() <= b2 ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

/// Joint collision probability: robot R ~ N(mu_rob, s_rob^2 I) collides if
/// any G_i ~ N(mu_i, s_i^2 I) lies within r_coll.
inline double joint_collision_monte_carlo(const Vec3& mu_rob, double sigma_rob,
                                          const std::vector<atlas::GaussianPoint>& gs,
                                          double r_coll, size_t n, uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  size_t hits = 0;
  for (size_t k = 0; k < n; ++k)
  {
    const Vec3 r = mu_rob + sigma_rob * Vec3(normal(rng), normal(rng), normal(rng));
    bool hit = false;
    for (const auto& g : gs)
    {
      const Vec3 x = g.mu + g.sigma * Vec3(normal(rng), normal(rng), normal(rng));
      hit = hit || (x - r).norm() <= r_coll;
    }
    hits += hit ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

/// Unicycle state integrated with classical RK4.
inline Vec3 unicycle_rk4(const Vec3& x0, double v, double omega, double t, int steps = 4000)
{
  auto f = [&](const Vec3& x) { return Vec3(v * std::cos(x(2)), v * std::sin(x(2)), omega); };
  Vec3 x = x0;
  const double h = t / steps;
  for (int i = 0; i < steps; ++i)
  {
    const Vec3 k1 = f(x);
    const Vec3 k2 = f(x + 0.5 * h * k1);
    const Vec3 k3 = f(x + 0.5 * h * k2);
    const Vec3 k4 = f(x + h * k3);
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

inline double angle_diff(double a, double b)
{
  return std::abs(std::remainder(a - b, 2.0 * std::numbers::pi));
}

/// All-pairs shortest paths.
inline MatX floyd_warshall(const atlas::SparseGraph& g)
{
  const auto n = static_cast<Eigen::Index>(g.size());
  MatX d = MatX::Constant(n, n, std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i)
  {
    d(i, i) = 0.0;
    for (const auto& e : g.neighbors(static_cast<size_t>(i)))
    {
      d(i, static_cast<Eigen::Index>(e.to)) = std::min(d(i, static_cast<Eigen::Index>(e.to)), e.weight);
    }
  }
  for (Eigen::Index k = 0; k < n; ++k)
  {
    for (Eigen::Index i = 0; i < n; ++i)
    {
      for (Eigen::Index j = 0; j < n; ++j)
      {
        d(i, j) = std::min(d(i, j), d(i, k) + d(k, j));
      }
    }
  }
  return d;
}

/// Best distinct-vertex utility over walks from `start` of cost <= budget:
/// every vertex subset containing the start, visited in every order along
/// shortest paths.
inline double brute_force_orienteering(const atlas::SparseGraph& g, size_t start, double budget)
{
  const size_t n = g.size();
  const MatX d = floyd_warshall(g);
  double best = g.vertex(start).utility;
  std::vector<size_t> others;
  for (size_t v = 0; v < n; ++v)
  {
    if (v != start)
    {
      others.push_back(v);
    }
  }
  for (uint32_t mask = 1; mask < (1u << others.size()); ++mask)
  {
    std::vector<size_t> subset;
    double utility = g.vertex(start).utility;
    for (size_t i = 0; i < others.size(); ++i)
    {
      if (mask & (1u << i))
      {
        subset.push_back(others[i]);
        utility += g.vertex(others[i]).utility;
      }
    }
    if (utility <= best)
    {
      continue;
    }
    std::sort(subset.begin(), subset.end());
    do
    {
      double cost = 0.0;
      size_t at = start;
      for (size_t v : subset)
      {
        cost += d(static_cast<Eigen::Index>(at), static_cast<Eigen::Index>(v));
        at = v;
        if (cost > budget)
        {
          break;
        }
      }
      if (cost <= budget)
      {
        best = utility;
        break;
      }
    } while (std::next_permutation(subset.begin(), subset.end()));
  }
  return best;
}

/// Length of the shortest simple path by exhaustive DFS.
inline double brute_force_shortest_path(const atlas::SparseGraph& g, size_t s, size_t t)
{
  double best = std::numeric_limits<double>::infinity();
  std::vector<char> on_path(g.size(), 0);
  std::function<void(size_t, double)> dfs = [&](size_t v, double cost) {
    if (v == t)
    {
      best = std::min(best, cost);
      return;
    }
    on_path[v] = 1;
    for (const auto& e : g.neighbors(v))
    {
      if (!on_path[e.to])
      {
        dfs(e.to, cost + e.weight);
      }
    }
    on_path[v] = 0;
  };
  dfs(s, 0.0);
  return best;
}

/// Average linkage by repeated global search; returns sorted merge heights
/// and the flat partition at `cut` as a label per point (labels numbered by
/// smallest member).
struct NaiveLinkage
{
  std::vector<double> heights;
  std::vector<size_t> labels;
};

inline NaiveLinkage naive_average_linkage(const MatX& dist, double cut)
{
  const auto n = static_cast<size_t>(dist.rows());
  std::vector<std::vector<size_t>> clusters(n);
  for (size_t i = 0; i < n; ++i)
  {
    clusters[i] = {i};
  }
  NaiveLinkage out;
  std::vector<std::vector<size_t>> at_cut = clusters;
  while (clusters.size() > 1)
  {
    double best = std::numeric_limits<double>::infinity();
    size_t bi = 0;
    size_t bj = 1;
    for (size_t i = 0; i < clusters.size(); ++i)
    {
      for (size_t j = i + 1; j < clusters.size(); ++j)
      {
        double sum = 0.0;
        for (size_t p : clusters[i])
        {
          for (size_t q : clusters[j])
          {
            sum += dist(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
          }
        }
        const double avg = sum / static_cast<double>(clusters[i].size() * clusters[j].size());
        if (avg < best)
        {
          best = avg;
          bi = i;
          bj = j;
        }
      }
    }
    out.heights.push_back(best);
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
    if (best <= cut)
    {
      at_cut = clusters;
    }
  }
  std::sort(out.heights.begin(), out.heights.end());
  for (auto& c : at_cut)
  {
    std::sort(c.begin(), c.end());
  }
  std::sort(at_cut.begin(), at_cut.end());
  out.labels.assign(n, 0);
  for (size_t k = 0; k < at_cut.size(); ++k)
  {
    for (size_t p : at_cut[k])
    {
      out.labels[p] = k;
    }
  }
  return out;
}

/// Top-k principal directions (rows) of the centered data by eigen-
/// decomposition of the covariance.
inline MatX batch_pca(const MatX& rows, int k)
{
  const VecX mean = rows.colwise().mean().transpose();
  const MatX centered = rows.rowwise() - mean.transpose();
  const MatX cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  Eigen::SelfAdjointEigenSolver<MatX> eig(cov);
  const auto n = cov.rows();
  MatX top(k, n);
  for (int i = 0; i < k; ++i)
  {
    top.row(i) = eig.eigenvectors().col(n - 1 - i).transpose();
  }
  return top;
}

/// Largest principal angle between the row spaces of two orthonormal-row
/// matrices.
inline double max_principal_angle(const MatX& a, const MatX& b)
{
  Eigen::JacobiSVD<MatX> svd(a * b.transpose());
  const double smallest = svd.singularValues().minCoeff();
  return std::acos(std::clamp(smallest, -1.0, 1.0));
}

}  // namespace oracle
