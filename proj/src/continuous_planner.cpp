#include "atlas/continuous_planner.hpp"

#include <algorithm>
#include <map>
#include <queue>
#include <stdexcept>

#include <json.hpp>

namespace atlas
{
void CollisionConfig::validate() const
{
  const bool positive = r_coll > 0.0 && sigma_rob > 0.0 && sigma_avg > 0.0 && rho > 0.0 &&
                        n_total > 0.0;
  if (!positive || !(eta > 0.0 && eta < 1.0) || !(p_tol > 0.0 && p_tol < 1.0))
  {
    throw std::invalid_argument("invalid collision config");
  }
}

double far_field_bound(const CollisionConfig& cfg, double radius)
{
  const double s = std::sqrt(cfg.sigma_rob * cfg.sigma_rob + cfg.sigma_avg * cfg.sigma_avg);
  const double ball = 4.0 / 3.0 * std::numbers::pi * radius * radius * radius * cfg.rho;
  const double population = std::max(0.0, cfg.n_total - ball);
  if (population == 0.0)
  {
    return 0.0;
  }
  return population * normal_ball_prob(radius / s, cfg.r_coll / s);
}

double compute_r_loc(const CollisionConfig& cfg)
{
  cfg.validate();
  auto bound_at = [&](int64_t i) { return far_field_bound(cfg, static_cast<double>(i) * kRLocResolution); };
  if (bound_at(0) <= cfg.p_tol)
  {
    return 0.0;
  }
  // The population factor vanishes at this radius, so the bound is 0 there.
  const double r_empty = std::cbrt(3.0 * cfg.n_total / (4.0 * std::numbers::pi * cfg.rho));
  int64_t lo = 0;
  auto hi = static_cast<int64_t>(std::ceil(r_empty / kRLocResolution)) + 1;
  while (bound_at(hi) > cfg.p_tol)
  {
    hi *= 2;
  }
  // Invariant: bound(lo) > p_tol, bound(hi) <= p_tol.
  while (hi - lo > 1)
  {
    const int64_t mid = lo + (hi - lo) / 2;
    if (bound_at(mid) <= cfg.p_tol)
    {
      hi = mid;
    }
    else
    {
      lo = mid;
    }
  }
  return static_cast<double>(hi) * kRLocResolution;
}

RobotState flow(const RobotState& x0, const ControlInput& u, double t)
{
  const Vec3 x = unicycle_flow<double>(Vec3(x0.p.x(), x0.p.y(), x0.theta), u.v, u.omega, t);
  return {x.head<2>(), x(2)};
}

MotionPrimitive integrate_primitive(const RobotState& x0, const ControlInput& u, double dt,
                                    int substeps, double lambda_t)
{
  if (!(dt > 0.0) || substeps < 1)
  {
    throw std::invalid_argument("primitive needs dt > 0 and at least one sub-step");
  }
  MotionPrimitive prim;
  prim.control = u;
  prim.duration = dt;
  prim.start = x0;
  prim.samples.reserve(static_cast<size_t>(substeps));
  for (int k = 1; k <= substeps; ++k)
  {
    const double t = k == substeps ? dt : dt * k / substeps;
    prim.samples.push_back(flow(x0, u, t));
  }
  prim.end_state = prim.samples.back();
  prim.cost = (lambda_t + u.v * u.v + u.omega * u.omega) * dt;
  return prim;
}

void LatticeConfig::validate() const
{
  if (n_v < 1 || n_omega < 1 || !(dt > 0.0) || !(v_max > 0.0) || !(omega_max >= 0.0) ||
      !(lambda_t > 0.0) || substeps < 1 || !(position_resolution > 0.0) || heading_bins < 1)
  {
    throw std::invalid_argument("invalid lattice config");
  }
}

std::vector<ControlInput> control_set(const LatticeConfig& lattice)
{
  lattice.validate();
  auto grid = [](int n, double max) {
    std::vector<double> g;
    if (n == 1)
    {
      g.push_back(max);
      return g;
    }
    for (int i = 0; i < n; ++i)
    {
      double value = -max + 2.0 * max * i / (n - 1);
      if (2 * i == n - 1)
      {
        value = 0.0;
      }
      g.push_back(value);
    }
    return g;
  };
  std::vector<ControlInput> controls;
  for (double v : grid(lattice.n_v, lattice.v_max))
  {
    for (double w : grid(lattice.n_omega, lattice.omega_max))
    {
      if (v == 0.0 && w == 0.0)
      {
        continue;
      }
      controls.push_back({v, w});
    }
  }
  return controls;
}

double state_collision_prob(const Vec3& position, std::span<const GaussianPoint> local,
                            const CollisionConfig& cfg)
{
  double sum = 0.0;
  for (const GaussianPoint& g : local)
  {
    sum += pairwise_collision_prob(position, cfg.sigma_rob, g, cfg.r_coll);
  }
  return std::min(sum, 1.0);
}

double state_collision_prob(const RobotState& state, std::span<const GaussianPoint> local,
                            const CollisionConfig& cfg, double z_rob)
{
  return state_collision_prob(Vec3(state.p.x(), state.p.y(), z_rob), local, cfg);
}

size_t CollisionChecker::CellHash::operator()(const CellKey& k) const
{
  const auto [x, y, z] = k;
  return static_cast<size_t>(x * 73856093LL ^ y * 19349663LL ^ z * 83492791LL);
}

CollisionChecker::CollisionChecker(GaussianCloud local, CollisionConfig cfg, double r_loc,
                                   CheckerOptions options)
    : cfg_(cfg), r_loc_(r_loc), options_(options)
{
  cfg_.validate();
  if (!(r_loc_ > 0.0))
  {
    throw std::invalid_argument("r_loc must be positive");
  }
  for (GaussianPoint& g : local)
  {
    if (g.mu.z() >= options_.ground_height)
    {
      points_.push_back(std::move(g));
    }
  }
  cell_ = r_loc_;
  for (size_t i = 0; i < points_.size(); ++i)
  {
    const Vec3 c = (points_[i].mu / cell_).array().floor();
    grid_[{static_cast<int64_t>(c.x()), static_cast<int64_t>(c.y()), static_cast<int64_t>(c.z())}]
        .push_back(i);
  }
}

double CollisionChecker::probability(const Vec2& p) const
{
  ++queries_;
  const Vec3 q(p.x(), p.y(), options_.z_rob);
  const Vec3 c = (q / cell_).array().floor();
  const double r2 = r_loc_ * r_loc_;
  double sum = 0.0;
  for (int64_t dx = -1; dx <= 1; ++dx)
  {
    for (int64_t dy = -1; dy <= 1; ++dy)
    {
      for (int64_t dz = -1; dz <= 1; ++dz)
      {
        const CellKey key{static_cast<int64_t>(c.x()) + dx, static_cast<int64_t>(c.y()) + dy,
                          static_cast<int64_t>(c.z()) + dz};
        const auto it = grid_.find(key);
        if (it == grid_.end())
        {
          continue;
        }
        for (size_t i : it->second)
        {
          const GaussianPoint& g = points_[i];
          if ((g.mu - q).squaredNorm() > r2)
          {
            continue;
          }
          sum += pairwise_collision_prob(q, cfg_.sigma_rob, g, cfg_.r_coll);
        }
      }
    }
  }
  return std::min(sum, 1.0);
}

bool CollisionChecker::is_free(const Vec2& p) const
{
  return probability(p) <= cfg_.eta - cfg_.p_tol;
}

bool CollisionChecker::is_free(const MotionPrimitive& primitive) const
{
  return std::all_of(primitive.samples.begin(), primitive.samples.end(),
                     [&](const RobotState& s) { return is_free(s.p); });
}

const char* to_string(PlanStatus status)
{
  switch (status)
  {
    case PlanStatus::Success:
      return "success";
    case PlanStatus::Infeasible:
      return "infeasible";
    case PlanStatus::StartInCollision:
      return "start_in_collision";
  }
  return "unknown";
}

double Trajectory::duration() const
{
  double t = 0.0;
  for (const MotionPrimitive& p : primitives)
  {
    t += p.duration;
  }
  return t;
}

RobotState Trajectory::state_at(const RobotState& start, double t) const
{
  RobotState x = start;
  for (const MotionPrimitive& p : primitives)
  {
    if (t <= 0.0)
    {
      break;
    }
    if (t >= p.duration)
    {
      x = p.end_state;
      t -= p.duration;
      continue;
    }
    return flow(p.start, p.control, t);
  }
  return x;
}

double min_cost_per_meter(const LatticeConfig& lattice)
{
  const double v_star = std::min(std::sqrt(lattice.lambda_t), lattice.v_max);
  return (lattice.lambda_t + v_star * v_star) / v_star;
}

double heuristic(const Vec2& p, const GoalRegion& goal, const LatticeConfig& lattice)
{
  const double d = std::max(0.0, (goal.center - p).norm() - goal.radius);
  return min_cost_per_meter(lattice) * d;
}

namespace
{
using LatticeKey = std::tuple<int64_t, int64_t, int64_t>;

LatticeKey lattice_key(const RobotState& s, const LatticeConfig& lattice)
{
  const double bin = 2.0 * std::numbers::pi / lattice.heading_bins;
  auto h = static_cast<int64_t>(std::llround(s.theta / bin)) % lattice.heading_bins;
  if (h < 0)
  {
    h += lattice.heading_bins;
  }
  return {std::llround(s.p.x() / lattice.position_resolution),
          std::llround(s.p.y() / lattice.position_resolution), h};
}

struct SearchNode
{
  RobotState state;
  double g = 0.0;
  size_t parent = 0;
  size_t control = 0;
};
}  // namespace

PlanResult plan(const RobotState& x0, const GoalRegion& goal, const CollisionChecker& checker,
                const LatticeConfig& lattice, const PlanBounds& bounds)
{
  lattice.validate();
  PlanResult result;
  if (!bounds.contains(goal.center))
  {
    result.status = PlanStatus::Infeasible;
    return result;
  }
  if (!checker.is_free(x0.p))
  {
    result.status = PlanStatus::StartInCollision;
    return result;
  }
  if (goal.contains(x0.p))
  {
    result.status = PlanStatus::Success;
    return result;
  }

  const std::vector<ControlInput> controls = control_set(lattice);
  std::vector<SearchNode> nodes;
  std::map<LatticeKey, double> best_g;
  using Item = std::tuple<double, double, size_t>;  // f, g, id
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;

  nodes.push_back({x0, 0.0, 0, 0});
  best_g[lattice_key(x0, lattice)] = 0.0;
  open.emplace(heuristic(x0.p, goal, lattice), 0.0, 0);

  while (!open.empty())
  {
    const auto [f, g, id] = open.top();
    open.pop();
    const SearchNode node = nodes[id];
    if (g > best_g[lattice_key(node.state, lattice)])
    {
      continue;
    }
    if (id != 0 && goal.contains(node.state.p))
    {
      std::vector<size_t> chain;
      for (size_t v = id; v != 0; v = nodes[v].parent)
      {
        chain.push_back(v);
      }
      std::reverse(chain.begin(), chain.end());
      RobotState at = x0;
      for (size_t v : chain)
      {
        MotionPrimitive prim =
            integrate_primitive(at, controls[nodes[v].control], lattice.dt, lattice.substeps,
                                lattice.lambda_t);
        at = prim.end_state;
        result.trajectory.cost += prim.cost;
        result.trajectory.primitives.push_back(std::move(prim));
      }
      result.status = PlanStatus::Success;
      return result;
    }
    if (result.expansions >= lattice.max_expansions)
    {
      break;
    }
    ++result.expansions;

    for (size_t c = 0; c < controls.size(); ++c)
    {
      const MotionPrimitive prim = integrate_primitive(node.state, controls[c], lattice.dt,
                                                       lattice.substeps, lattice.lambda_t);
      const double ng = node.g + prim.cost;
      const LatticeKey key = lattice_key(prim.end_state, lattice);
      const auto it = best_g.find(key);
      if (it != best_g.end() && it->second <= ng)
      {
        continue;
      }
      const bool inside = std::all_of(prim.samples.begin(), prim.samples.end(),
                                      [&](const RobotState& s) { return bounds.contains(s.p); });
      if (!inside || !checker.is_free(prim))
      {
        continue;
      }
      best_g[key] = ng;
      nodes.push_back({prim.end_state, ng, id, c});
      open.emplace(ng + heuristic(prim.end_state.p, goal, lattice), ng, nodes.size() - 1);
    }
  }
  result.status = PlanStatus::Infeasible;
  return result;
}

HorizonGoal select_horizon_goal(const BudgetedPath& path, const Vec2& robot, double horizon)
{
  if (path.positions.empty())
  {
    throw std::invalid_argument("receding horizon needs a nonempty path");
  }
  HorizonGoal goal;
  bool found = false;
  for (size_t i = path.positions.size(); i-- > 0;)
  {
    if ((path.positions[i].head<2>() - robot).norm() <= horizon)
    {
      goal.index = i;
      found = true;
      break;
    }
  }
  if (!found)
  {
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < path.positions.size(); ++i)
    {
      const double d = (path.positions[i].head<2>() - robot).norm();
      if (d < best)
      {
        best = d;
        goal.index = i;
      }
    }
    goal.fallback = true;
  }
  goal.center = path.positions[goal.index].head<2>();
  return goal;
}

HorizonStep receding_horizon_step(const BudgetedPath& path, const RobotState& x0, double horizon,
                                  double goal_radius, const CollisionChecker& checker,
                                  const LatticeConfig& lattice, const PlanBounds& bounds)
{
  HorizonStep step;
  step.goal = select_horizon_goal(path, x0.p, horizon);
  step.result = plan(x0, {step.goal.center, goal_radius}, checker, lattice, bounds);
  return step;
}

void write_trajectory(std::ostream& out, const RobotState& start, const Trajectory& trajectory,
                      double t0, double cost0, bool include_start)
{
  auto emit = [&](double t, const RobotState& s, const ControlInput& u, double cost) {
    nlohmann::json rec = {{"t", t},         {"x", s.p.x()},     {"y", s.p.y()},
                          {"theta", s.theta}, {"v", u.v},         {"omega", u.omega},
                          {"cum_cost", cost}};
    out << rec.dump() << '\n';
  };
  if (include_start)
  {
    emit(t0, start, {}, cost0);
  }
  double t = t0;
  double cost = cost0;
  for (const MotionPrimitive& p : trajectory.primitives)
  {
    const auto n = static_cast<double>(p.samples.size());
    for (size_t k = 0; k < p.samples.size(); ++k)
    {
      const double frac = static_cast<double>(k + 1) / n;
      emit(t + frac * p.duration, p.samples[k], p.control, cost + frac * p.cost);
    }
    t += p.duration;
    cost += p.cost;
  }
}

}  // namespace atlas
