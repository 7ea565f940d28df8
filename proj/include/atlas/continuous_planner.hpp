#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "atlas/collision.hpp"
#include "atlas/discrete_planner.hpp"
#include "atlas/splat_map.hpp"

namespace atlas
{
/// Wrap to (-pi, pi].
template <typename Scalar>
Scalar wrap_angle(Scalar theta)
{
  constexpr Scalar kPi = std::numbers::pi_v<Scalar>;
  Scalar wrapped = std::remainder(theta, Scalar(2) * kPi);
  if (wrapped <= -kPi)
  {
    wrapped += Scalar(2) * kPi;
  }
  return wrapped;
}

struct RobotState
{
  Vec2 p = Vec2::Zero();
  double theta = 0.0;
};

struct ControlInput
{
  double v = 0.0;
  double omega = 0.0;
};

/// Closed-form unicycle flow: constant (v, omega) applied for time t.
/// Straight line for omega == 0, otherwise an arc of radius v / omega.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> unicycle_flow(const Eigen::Matrix<Scalar, 3, 1>& x0, Scalar v,
                                          Scalar omega, Scalar t)
{
  using std::cos;
  using std::sin;
  const Scalar theta0 = x0(2);
  Eigen::Matrix<Scalar, 3, 1> x = x0;
  if (omega == Scalar(0))
  {
    x(0) += v * t * cos(theta0);
    x(1) += v * t * sin(theta0);
  }
  else
  {
    const Scalar theta1 = theta0 + omega * t;
    x(0) += v / omega * (sin(theta1) - sin(theta0));
    x(1) -= v / omega * (cos(theta1) - cos(theta0));
    x(2) = theta1;
  }
  x(2) = wrap_angle(x(2));
  return x;
}

RobotState flow(const RobotState& x0, const ControlInput& u, double t);

struct MotionPrimitive
{
  ControlInput control;
  double duration = 0.0;
  RobotState start;
  /// States at t = k * duration / substeps, k = 1..substeps.
  std::vector<RobotState> samples;
  RobotState end_state;
  double cost = 0.0;
};

/// J = lambda_t * dt + (v^2 + omega^2) * dt.
MotionPrimitive integrate_primitive(const RobotState& x0, const ControlInput& u, double dt,
                                    int substeps, double lambda_t = 1.0);

struct LatticeConfig
{
  int n_v = 5;
  int n_omega = 7;
  double dt = 1.0;
  double v_max = 1.0;
  double omega_max = 1.0;
  double lambda_t = 1.0;
  int substeps = 5;
  double position_resolution = 0.1;
  int heading_bins = 16;
  size_t max_expansions = 20000;

  void validate() const;
};

/// Cartesian product of uniform grids over [-v_max, v_max] x
/// [-omega_max, omega_max], excluding the zero control.
std::vector<ControlInput> control_set(const LatticeConfig& lattice);

/// Union-bound collision probability of a robot at `position` (3D) against
/// `local`, clamped to 1. Every Gaussian in `local` contributes.
double state_collision_prob(const Vec3& position, std::span<const GaussianPoint> local,
                            const CollisionConfig& cfg);

double state_collision_prob(const RobotState& state, std::span<const GaussianPoint> local,
                            const CollisionConfig& cfg, double z_rob);

struct CheckerOptions
{
  double z_rob = 0.3;
  /// Gaussians with mean below this height are traversable ground.
  double ground_height = -std::numeric_limits<double>::infinity();
};

/// Chance-constraint test against an immutable snapshot of the local map.
/// Only Gaussians within `r_loc` of the robot are summed; a state is free
/// iff the sum is <= eta - p_tol.
class CollisionChecker
{
public:
  CollisionChecker(GaussianCloud local, CollisionConfig cfg, double r_loc,
                   CheckerOptions options = {});

  double probability(const Vec2& p) const;
  bool is_free(const Vec2& p) const;
  bool is_free(const MotionPrimitive& primitive) const;

  const CollisionConfig& config() const { return cfg_; }
  double r_loc() const { return r_loc_; }
  const CheckerOptions& options() const { return options_; }
  const GaussianCloud& points() const { return points_; }
  size_t queries() const { return queries_; }

private:
  using CellKey = std::tuple<int64_t, int64_t, int64_t>;
  struct CellHash
  {
    size_t operator()(const CellKey& k) const;
  };

  GaussianCloud points_;
  CollisionConfig cfg_;
  double r_loc_;
  CheckerOptions options_;
  double cell_ = 1.0;
  std::unordered_map<CellKey, std::vector<size_t>, CellHash> grid_;
  mutable size_t queries_ = 0;
};

struct GoalRegion
{
  Vec2 center = Vec2::Zero();
  double radius = 0.5;

  bool contains(const Vec2& p) const { return (p - center).norm() <= radius; }
};

struct PlanBounds
{
  Vec2 min = Vec2::Constant(-std::numeric_limits<double>::infinity());
  Vec2 max = Vec2::Constant(std::numeric_limits<double>::infinity());

  bool contains(const Vec2& p) const
  {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

enum class PlanStatus
{
  Success,
  Infeasible,
  StartInCollision,
};

const char* to_string(PlanStatus status);

struct Trajectory
{
  std::vector<MotionPrimitive> primitives;
  double cost = 0.0;

  double duration() const;
  bool empty() const { return primitives.empty(); }
  /// State after following the trajectory for time t (clamped to its end).
  RobotState state_at(const RobotState& start, double t) const;
};

struct PlanResult
{
  PlanStatus status = PlanStatus::Infeasible;
  Trajectory trajectory;
  size_t expansions = 0;
};

/// Lower bound on cost per meter travelled: min over 0 < v <= v_max of
/// (lambda_t + v^2) / v.
double min_cost_per_meter(const LatticeConfig& lattice);

/// Consistent heuristic: min_cost_per_meter * distance to the goal region.
double heuristic(const Vec2& p, const GoalRegion& goal, const LatticeConfig& lattice);

/// A* over motion primitives. Successor states are deduplicated on a
/// (position, heading) lattice keeping the best cost per cell; an edge is
/// admitted only if every sample is free. Ties in f are broken by g then
/// by state id.
PlanResult plan(const RobotState& x0, const GoalRegion& goal, const CollisionChecker& checker,
                const LatticeConfig& lattice, const PlanBounds& bounds = {});

struct HorizonGoal
{
  size_t index = 0;
  Vec2 center = Vec2::Zero();
  /// True when no path vertex lay within the horizon and the nearest was used.
  bool fallback = false;
};

/// Furthest vertex along `path` (largest index) within `horizon` of the
/// robot, or the nearest vertex when none is.
HorizonGoal select_horizon_goal(const BudgetedPath& path, const Vec2& robot, double horizon);

struct HorizonStep
{
  HorizonGoal goal;
  PlanResult result;
};

HorizonStep receding_horizon_step(const BudgetedPath& path, const RobotState& x0, double horizon,
                                  double goal_radius, const CollisionChecker& checker,
                                  const LatticeConfig& lattice, const PlanBounds& bounds = {});

/// One JSON object per line: {t, x, y, theta, v, omega, cum_cost}, sampled at
/// every primitive sub-step, preceded by the start state when include_start.
void write_trajectory(std::ostream& out, const RobotState& start, const Trajectory& trajectory,
                      double t0 = 0.0, double cost0 = 0.0, bool include_start = true);

}  // namespace atlas
