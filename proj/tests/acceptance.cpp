// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>

#include "atlas/mission.hpp"
#include "oracles.hpp"

using namespace atlas;

namespace
{
struct Outcome
{
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what)
  {
    if (!ok && pass)
    {
      detail = what;
    }
    pass = pass && ok;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename... Args>
std::string fmt(const char* f, Args... args)
{
  char buf[256];
  // Numbers always print through floating conversions.
  auto arg = [](auto x) {
    if constexpr (std::is_arithmetic_v<decltype(x)>)
    {
      return static_cast<double>(x);
    }
    else
    {
      return x;
    }
  };
  std::snprintf(buf, sizeof buf, f, arg(args)...);
  return buf;
}

double chi3_cdf(double b)
{
  return std::erf(b / std::numbers::sqrt2) -
         std::sqrt(2.0 / std::numbers::pi) * b * std::exp(-0.5 * b * b);
}

// 1: closed-form ball probability against Monte Carlo.
Outcome collision_math()
{
  Outcome o;
  const auto t0 = Clock::now();
  const size_t n = 1'000'000;
  const auto samples = oracle::normal_samples(n, 20240601);
  constexpr int kGrid = 20;
  double worst_z = 0.0;
  int beyond = 0;
  std::string first_bad;
  for (int j = 0; j < kGrid; ++j)
  {
    const double b = 0.1 + 2.9 * j / (kGrid - 1);
    double prev = 2.0;
    for (int i = 0; i < kGrid; ++i)
    {
      const double a = 10.0 * i / (kGrid - 1);
      const double p = normal_ball_prob(a, b);
      const double mc = oracle::ball_prob_monte_carlo(samples, a, b);
      const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
      const double err = std::abs(mc - p);
      // With p below 1/n a zero count is the expected outcome.
      const bool ok = err <= 3.0 * se || (mc == 0.0 && p * static_cast<double>(n) < 1e-2);
      if (se > 0.0)
      {
        worst_z = std::max(worst_z, err / se);
      }
      if (!ok && beyond++ == 0)
      {
        first_bad = fmt("a=%.3f b=%.3f", a, b);
      }
      o.require(p <= prev, fmt("not monotone at a=%.3f b=%.3f", a, b));
      prev = p;
    }
    const double limit_err = std::abs(normal_ball_prob(1e-9, b) - chi3_cdf(b));
    o.require(limit_err <= 1e-6, fmt("chi3 limit off by %.3g at b=%.3f", limit_err, b));
  }
  o.require(beyond == 0, fmt("%.0f of 400 grid points beyond 3 se (first %s, worst %.2f se)", beyond,
                             first_bad.c_str(), worst_z));
  const double t = seconds_since(t0);
  o.require(t < 60.0, fmt("took %.1f s", t));
  if (o.pass)
  {
    o.detail = fmt("400 grid points, worst |err|/se %.2f, %.1f s", worst_z, t);
  }
  return o;
}

// 2: union bound against joint Monte Carlo.
Outcome union_bound()
{
  Outcome o;
  CollisionConfig cfg;
  const size_t n = 100'000;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> su(0.01, 0.1);
  const Vec3 robot(0.0, 0.0, 0.3);
  for (int scene = 0; scene < 50; ++scene)
  {
    GaussianCloud cloud(1 + static_cast<size_t>(scene % 10));
    for (GaussianPoint& g : cloud)
    {
      g.mu = robot + 0.6 * Vec3(u(rng), u(rng), u(rng));
      g.sigma = su(rng);
    }
    const double bound = state_collision_prob(robot, cloud, cfg);
    const double mc = oracle::joint_collision_monte_carlo(robot, cfg.sigma_rob, cloud, cfg.r_coll,
                                                          n, 1000 + scene);
    const double se = std::sqrt(std::max(mc * (1.0 - mc), 1e-12) / static_cast<double>(n));
    o.require(bound >= mc - 3.0 * se,
              fmt("scene %.0f: bound %.4f below MC %.4f", scene, bound, mc));
  }

  // Near-disjoint events: one Gaussian per axis direction, far enough apart
  // that two collisions at once need a many-sigma robot excursion.
  double worst_rel = 0.0;
  for (int scene = 0; scene < 10; ++scene)
  {
    const int k = 2 + scene % 5;
    const double sigma = 0.02 + 0.005 * scene;
    const double target = 0.02;
    // Distance with pairwise probability `target`, by bisection.
    double lo = 0.0;
    double hi = 3.0;
    for (int it = 0; it < 100; ++it)
    {
      const double mid = 0.5 * (lo + hi);
      const double p = pairwise_collision_prob<double>(robot, cfg.sigma_rob,
                                                       robot + Vec3(mid, 0, 0), sigma, cfg.r_coll);
      (p > target ? lo : hi) = mid;
    }
    const Vec3 axes[6] = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(),
                          -Vec3::UnitY(), Vec3::UnitZ(), -Vec3::UnitZ()};
    GaussianCloud cloud;
    for (int i = 0; i < k; ++i)
    {
      cloud.push_back(GaussianPoint{robot + hi * axes[i], sigma});
    }
    const double bound = state_collision_prob(robot, cloud, cfg);
    const double mc = oracle::joint_collision_monte_carlo(robot, cfg.sigma_rob, cloud, cfg.r_coll,
                                                          n, 5000 + scene);
    const double rel = std::abs(bound - mc) / mc;
    worst_rel = std::max(worst_rel, rel);
    o.require(rel <= 0.05, fmt("disjoint scene %.0f: bound %.4f vs MC %.4f", scene, bound, mc));
  }
  if (o.pass)
  {
    o.detail = fmt("50 random scenes conservative, disjoint worst rel. gap %.3f", worst_rel);
  }
  return o;
}

// 3: R_loc against a 1 mm scan.
Outcome r_loc()
{
  Outcome o;
  std::mt19937_64 rng(3);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  for (int c = 0; c < 20; ++c)
  {
    CollisionConfig cfg;
    cfg.r_coll = uniform(0.1, 0.5);
    cfg.sigma_rob = uniform(0.02, 0.5);
    cfg.sigma_avg = uniform(0.005, 0.1);
    cfg.rho = std::pow(10.0, uniform(1.0, 3.0));
    cfg.n_total = std::pow(10.0, uniform(3.0, 6.5));
    cfg.p_tol = std::pow(10.0, uniform(-5.0, -2.0));
    cfg.eta = std::max(0.05, 10.0 * cfg.p_tol);
    const double r = compute_r_loc(cfg);
    int64_t i = 0;
    while (far_field_bound(cfg, static_cast<double>(i) * kRLocResolution) > cfg.p_tol)
    {
      ++i;
    }
    const double scan = static_cast<double>(i) * kRLocResolution;
    o.require(r == scan, fmt("config %.0f: search %.3f vs scan %.3f", c, r, scan));
    o.require(far_field_bound(cfg, r) <= cfg.p_tol, fmt("config %.0f: bound above p_tol", c));
    if (r > 0.0)
    {
      o.require(far_field_bound(cfg, r - kRLocResolution) > cfg.p_tol,
                fmt("config %.0f: R_loc - 1 mm already within p_tol", c));
    }
  }
  if (o.pass)
  {
    o.detail = "20 configs match the scan";
  }
  return o;
}

SparseGraph random_graph(size_t n, double edge_prob, uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SparseGraph g;
  for (size_t i = 0; i < n; ++i)
  {
    g.add_vertex({Vec3(10.0 * u(rng), 10.0 * u(rng), 0.0), u(rng) < 0.2 ? 0.0 : 10.0 * u(rng)});
  }
  for (size_t i = 0; i < n; ++i)
  {
    for (size_t j = i + 1; j < n; ++j)
    {
      if (u(rng) < edge_prob)
      {
        g.add_edge(i, j, 0.5 + 4.0 * u(rng));
      }
    }
  }
  return g;
}

// 4: budgeted planner exactness.
Outcome discrete_planner()
{
  Outcome o;
  std::mt19937_64 rng(4);
  for (uint64_t seed = 0; seed < 200; ++seed)
  {
    const size_t n = 1 + seed % 10;
    const SparseGraph g = random_graph(n, 0.4, 7000 + seed);
    const size_t start = seed % n;
    const double budget = std::uniform_real_distribution<double>(0.0, 15.0)(rng);
    const BudgetedPath p = plan_budgeted(g, start, budget);
    const BudgetedPath eval = evaluate_walk(g, p.vertices);
    const double ref = oracle::brute_force_orienteering(g, start, budget);
    o.require(!p.vertices.empty() && p.vertices.front() == start,
              fmt("graph %.0f: walk does not leave from the start", seed));
    o.require(eval.total_cost <= budget + 1e-9, fmt("graph %.0f: over budget", seed));
    o.require(std::abs(eval.total_utility - ref) <= 1e-9 * (1.0 + ref),
              fmt("graph %.0f: utility %.4f vs brute force %.4f", seed, eval.total_utility, ref));
  }
  for (uint64_t s = 0; s < 20; ++s)
  {
    const SparseGraph g = random_graph(10, 0.3, 8000 + s);
    double prev = -1.0;
    for (double budget = 0.0; budget <= 30.0; budget += 0.75)
    {
      const double util = plan_budgeted(g, 0, budget).total_utility;
      o.require(util >= prev, fmt("sweep %.0f: utility drops at budget %.2f", s, budget));
      prev = util;
    }
  }
  if (o.pass)
  {
    o.detail = "200 graphs exact, 20 budget sweeps monotone";
  }
  return o;
}

bool dynamically_feasible(const RobotState& start, const Trajectory& traj, const LatticeConfig& lat)
{
  RobotState at = start;
  for (const MotionPrimitive& p : traj.primitives)
  {
    if (std::abs(p.control.v) > lat.v_max + 1e-12 || std::abs(p.control.omega) > lat.omega_max + 1e-12 ||
        (p.start.p - at.p).norm() > 1e-12 || oracle::angle_diff(p.start.theta, at.theta) > 1e-12)
    {
      return false;
    }
    const int n = static_cast<int>(p.samples.size());
    for (int k = 0; k < n; ++k)
    {
      const double t = p.duration * (k + 1) / n;
      const Vec3 ref = oracle::unicycle_rk4(Vec3(p.start.p.x(), p.start.p.y(), p.start.theta),
                                            p.control.v, p.control.omega, t, 400);
      const RobotState& s = p.samples[static_cast<size_t>(k)];
      if ((s.p - ref.head<2>()).norm() > 1e-9 || oracle::angle_diff(s.theta, ref(2)) > 1e-9)
      {
        return false;
      }
    }
    at = p.end_state;
  }
  return true;
}

CollisionChecker empty_checker()
{
  return CollisionChecker({}, CollisionConfig{}, 1.0);
}

// 5: primitive endpoints against RK4; planned trajectories feasible.
Outcome primitives()
{
  Outcome o;
  LatticeConfig lat;
  lat.n_v = 5;
  lat.n_omega = 7;
  // The search drops the null control; integrate it here anyway.
  auto controls = control_set(lat);
  o.require(controls.size() == 34, "control lattice is not 5 x 7 minus the null control");
  controls.push_back({0.0, 0.0});
  double worst = 0.0;
  const RobotState x0{Vec2(0.3, -0.7), 0.9};
  for (const ControlInput& u : controls)
  {
    for (int k = 1; k <= 10; ++k)
    {
      const double dt = 0.25 * k;
      const MotionPrimitive p = integrate_primitive(x0, u, dt, 5);
      const Vec3 ref = oracle::unicycle_rk4(Vec3(x0.p.x(), x0.p.y(), x0.theta), u.v, u.omega, dt);
      const double err = std::max((p.end_state.p - ref.head<2>()).norm(),
                                  oracle::angle_diff(p.end_state.theta, ref(2)));
      worst = std::max(worst, err);
    }
  }
  o.require(worst <= 1e-9, fmt("endpoint error %.3g", worst));

  const auto checker = empty_checker();
  int planned = 0;
  for (const auto& [gx, gy] : {std::pair{4.0, 0.0}, {2.0, 3.0}, {-3.0, 1.0}, {0.0, -4.0}, {5.0, 5.0}})
  {
    const RobotState s{Vec2::Zero(), 0.0};
    const PlanResult r = plan(s, {Vec2(gx, gy), 0.5}, checker, lat);
    o.require(r.status == PlanStatus::Success, "plan failed in free space");
    o.require(dynamically_feasible(s, r.trajectory, lat), "planned trajectory violates dynamics");
    ++planned;
  }
  if (o.pass)
  {
    o.detail = fmt("350 arcs, worst endpoint error %.2g; %.0f planned trajectories feasible",
                   worst, planned);
  }
  return o;
}

// 6: A* cost against the straight full-speed policy; blocking wall.
Outcome a_star()
{
  Outcome o;
  LatticeConfig lat;
  const auto checker = empty_checker();
  const double quantum = (lat.lambda_t + lat.v_max * lat.v_max) * lat.dt;
  double worst = 0.0;
  for (double d : {2.0, 3.0, 4.5, 6.0, 8.0})
  {
    for (double heading : {0.0, 1.1, -2.4})
    {
      const RobotState start{Vec2(0.5, 0.5), heading};
      const GoalRegion goal{start.p + d * Vec2(std::cos(heading), std::sin(heading)), 0.5};
      const PlanResult r = plan(start, goal, checker, lat);
      o.require(r.status == PlanStatus::Success, "free-space plan failed");
      const double j = (lat.lambda_t / lat.v_max + lat.v_max) * d;
      worst = std::max(worst, std::abs(r.trajectory.cost - j));
      o.require(std::abs(r.trajectory.cost - j) <= quantum,
                fmt("cost %.3f vs closed form %.3f", r.trajectory.cost, j));
    }
  }

  CollisionConfig cfg;
  cfg.eta = 0.01;
  GaussianCloud wall;
  for (double y = -3.0; y <= 3.0; y += 0.05)
  {
    for (double z = 0.0; z <= 1.0; z += 0.1)
    {
      wall.push_back(GaussianPoint{Vec3(2.0, y, z), 0.02});
    }
  }
  const CollisionChecker blocked(wall, cfg, compute_r_loc(cfg));
  const PlanBounds bounds{Vec2(-2, -2.5), Vec2(6, 2.5)};
  lat.max_expansions = 200000;
  for (const Vec2 goal : {Vec2(4, 0), Vec2(5, 2), Vec2(3, -2)})
  {
    const PlanResult r = plan(RobotState{}, {goal, 0.5}, blocked, lat, bounds);
    o.require(r.status == PlanStatus::Infeasible, "wall instance not reported infeasible");
    o.require(r.expansions < lat.max_expansions, "wall instance hit the expansion cap");
  }
  if (o.pass)
  {
    o.detail = fmt("15 free instances within %.2f (quantum %.1f); 3 wall instances infeasible",
                   worst, quantum);
  }
  return o;
}

MatX low_rank_corpus(int rows, int dim, int k, double noise, uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatX g(dim, k);
  for (Eigen::Index i = 0; i < g.size(); ++i)
  {
    g.data()[i] = normal(rng);
  }
  const MatX q = Eigen::HouseholderQR<MatX>(g).householderQ() * MatX::Identity(dim, k);
  MatX out(rows, dim);
  for (int r = 0; r < rows; ++r)
  {
    VecX x = VecX::Constant(dim, 0.3);
    for (int j = 0; j < k; ++j)
    {
      x += (12.0 - 0.4 * j) * normal(rng) * q.col(j);
    }
    for (int i = 0; i < dim; ++i)
    {
      x(i) += noise * normal(rng);
    }
    out.row(r) = x.transpose();
  }
  return out;
}

// 7: codec subspace and identities.
Outcome codec()
{
  Outcome o;
  const MatX data = low_rank_corpus(2000, 512, 24, 0.1, 7);
  // Shuffled mini-batches.
  std::vector<Eigen::Index> order(static_cast<size_t>(data.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(11));
  MatX shuffled(data.rows(), data.cols());
  for (size_t i = 0; i < order.size(); ++i)
  {
    shuffled.row(static_cast<Eigen::Index>(i)) = data.row(order[i]);
  }
  const PcaBasis b = fit_corpus(make_basis(512, 24, false), shuffled, 128);
  const double angle = oracle::max_principal_angle(b.components, oracle::batch_pca(data, 24));
  o.require(angle <= 1e-2, fmt("principal angle %.3g", angle));
  const double gram = (b.components * b.components.transpose() - MatX::Identity(24, 24)).norm();
  o.require(gram <= 1e-6, fmt("Gram deviation %.3g", gram));

  // In-span data reconstructs exactly.
  const MatX clean = low_rank_corpus(300, 512, 24, 0.0, 8);
  const PcaBasis bc = fit_corpus(make_basis(512, 24, false), clean, 100);
  double worst_span = 0.0;
  double worst_id = 0.0;
  double worst_rel = 0.0;
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal(0.0, 1.0);
  const VecX task = clean.row(3).transpose();
  const RelevancyQuery q(bc, task);
  for (int r = 0; r < 50; ++r)
  {
    const VecX f = clean.row(r).transpose();
    worst_span = std::max(worst_span, (lift(bc, project(bc, f)) - f).norm());
    VecX c(24);
    for (int i = 0; i < 24; ++i)
    {
      c(i) = normal(rng);
    }
    worst_id = std::max(worst_id, (project(bc, lift(bc, c)) - c).norm());
    const VecX cf = project(bc, f);
    worst_rel = std::max(worst_rel, std::abs(q(cf) - relevancy(f, task)));
  }
  o.require(worst_span <= 1e-6, fmt("in-span reconstruction error %.3g", worst_span));
  o.require(worst_id <= 1e-9, fmt("project o lift error %.3g", worst_id));
  o.require(worst_rel <= 1e-6, fmt("compressed relevancy error %.3g", worst_rel));
  if (o.pass)
  {
    o.detail = fmt("principal angle %.2g, reconstruction %.1g, identity %.1g", angle, worst_span,
                   worst_id);
  }
  return o;
}

GaussianCloud random_cloud(size_t n, int n_c, uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  GaussianCloud out(n);
  for (GaussianPoint& g : out)
  {
    g.mu = Vec3(u(rng), u(rng), 0.25 * u(rng));
    g.feature = VecX(n_c);
    for (int i = 0; i < n_c; ++i)
    {
      g.feature(i) = normal(rng);
    }
  }
  return out;
}

bool sum_rule_holds(const ClusterNode& node)
{
  if (node.is_leaf())
  {
    return node.utility >= 0.0;
  }
  double sum = 0.0;
  bool ok = true;
  for (const ClusterNode& c : node.children)
  {
    ok = sum_rule_holds(c) && ok;
    sum += c.utility;
  }
  return ok && node.utility == sum;
}

std::set<std::set<uint64_t>> partition_of(const std::vector<size_t>& labels)
{
  std::map<size_t, std::set<uint64_t>> m;
  for (size_t i = 0; i < labels.size(); ++i)
  {
    m[labels[i]].insert(i);
  }
  std::set<std::set<uint64_t>> out;
  for (auto& [k, s] : m)
  {
    out.insert(s);
  }
  return out;
}

// 8: hierarchy sum rule, re-tasking, lambda = 0.
Outcome hierarchy()
{
  Outcome o;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatX corpus(64, 48);
  for (Eigen::Index i = 0; i < corpus.size(); ++i)
  {
    corpus.data()[i] = normal(rng);
  }
  const PcaBasis basis = fit_corpus(make_basis(48, 8, true), corpus, 32);
  auto random_task = [&]() {
    VecX t(48);
    for (int i = 0; i < 48; ++i)
    {
      t(i) = normal(rng);
    }
    return TaskQuery{t, std::nullopt};
  };
  for (int t = 0; t < 100; ++t)
  {
    HierarchyConfig cfg;
    cfg.lambda = 0.25 * (t % 5);
    const ClusterNode root = build_hierarchy(random_cloud(10 + static_cast<size_t>(t), 8, 300 + t), cfg);
    const ClusterNode a = score_task(root, random_task(), basis);
    const ClusterNode b = score_task(a, random_task(), basis);
    o.require(sum_rule_holds(a) && sum_rule_holds(b), fmt("tree %.0f: sum rule broken", t));
    o.require(structure_hash(a) == structure_hash(root) && structure_hash(b) == structure_hash(root),
              fmt("tree %.0f: re-tasking changed the structure", t));
  }
  for (int t = 0; t < 20; ++t)
  {
    const GaussianCloud cloud = random_cloud(30 + static_cast<size_t>(t), 8, 600 + t);
    HierarchyConfig cfg;
    cfg.lambda = 0.0;
    const ClusterNode root = build_hierarchy(cloud, cfg);
    MatX euclid(cloud.size(), cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i)
    {
      for (size_t j = 0; j < cloud.size(); ++j)
      {
        euclid(i, j) = (cloud[i].mu - cloud[j].mu).norm();
      }
    }
    std::set<std::set<uint64_t>> objects;
    std::set<std::set<uint64_t>> regions;
    for (const ClusterNode& region : root.children)
    {
      std::set<uint64_t> rs;
      for (const ClusterNode& obj : region.children)
      {
        objects.emplace(obj.members.begin(), obj.members.end());
        rs.insert(obj.members.begin(), obj.members.end());
      }
      regions.insert(rs);
    }
    o.require(objects == partition_of(oracle::naive_average_linkage(euclid, cfg.cut_object).labels),
              fmt("cloud %.0f: object partition differs from the Euclidean oracle", t));
    o.require(regions == partition_of(oracle::naive_average_linkage(euclid, cfg.cut_region).labels),
              fmt("cloud %.0f: region partition differs from the Euclidean oracle", t));
  }
  if (o.pass)
  {
    o.detail = "100 trees, sum rule exact, hashes stable; 20 lambda=0 clouds match";
  }
  return o;
}

GaussianCloud cloud_near(const Vec3& c, size_t n, uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GaussianCloud out(n);
  for (GaussianPoint& g : out)
  {
    g.mu = c + Vec3(u(rng), u(rng), 0.5 + 0.5 * u(rng));
    g.sigma = 0.015;
    g.color = Vec3(0.5 + 0.5 * u(rng), 0.3, 0.2);
    g.feature = VecX::Constant(4, u(rng));
  }
  return out;
}

Pose yaw_pose(double x, double y, double yaw)
{
  Pose p = Pose::Identity();
  p.linear() = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
  p.translation() = Vec3(x, y, 0.0);
  return p;
}

std::string bytes_of(const std::filesystem::path& p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 9: submap invariants.
Outcome submaps()
{
  Outcome o;
  const auto root = std::filesystem::temp_directory_path() / "atlas_acceptance";
  std::filesystem::remove_all(root);
  SubmapStore store(2.0, 4.0, root / "spill");
  std::map<uint64_t, size_t> counts;
  bool saw_unloaded = false;
  for (int step = 0; step < 100; ++step)
  {
    const double s = step < 50 ? 0.4 * step : 0.4 * (99 - step);
    const Pose robot = yaw_pose(s, step < 50 ? 0.0 : 1.0, step < 50 ? 0.0 : std::numbers::pi);
    store.refresh_loaded(robot.translation());
    const uint64_t id = store.ensure_submap(robot);
    store.insert_points(id, cloud_near(robot.translation(), 12, static_cast<uint64_t>(step)));
    counts[id] += 12;
    store.refresh_loaded(robot.translation());
    bool any_unloaded = false;
    for (const auto& [sid, sm] : store.submaps())
    {
      const bool within = (sm.anchor_position() - robot.translation()).norm() <= store.r_load();
      o.require(sm.loaded == within, fmt("step %.0f: submap %.0f load state wrong", step, sid));
      o.require(sm.point_count == counts[sid], fmt("step %.0f: submap %.0f lost points", step, sid));
      any_unloaded = any_unloaded || !sm.loaded;
    }
    if (any_unloaded)
    {
      saw_unloaded = true;
      o.require(store.resident_count() < store.global_count(),
                fmt("step %.0f: resident %.0f not below global %.0f", step,
                    static_cast<double>(store.resident_count()),
                    static_cast<double>(store.global_count())));
    }
  }
  o.require(saw_unloaded, "trajectory never unloaded a submap");

  // Drifted two-submap world.
  const Pose true_b = yaw_pose(3.0, 0.5, 0.4);
  Pose drift = Pose::Identity();
  drift.linear() = Eigen::AngleAxisd(0.07, Vec3(0.2, -0.1, 1.0).normalized()).toRotationMatrix();
  drift.translation() = Vec3(0.25, -0.3, 0.04);
  SubmapStore world(1.0, 100.0);
  const uint64_t a = world.ensure_submap(yaw_pose(0, 0, 0));
  const uint64_t b = world.ensure_submap(drift * true_b);
  const GaussianCloud truth_a = cloud_near(Vec3(1, 0, 0), 40, 1);
  const GaussianCloud truth_b = cloud_near(Vec3(3.5, 0.5, 0), 40, 2);
  world.insert_points(a, truth_a);
  GaussianCloud drifted = truth_b;
  for (GaussianPoint& g : drifted)
  {
    g.mu = drift * g.mu;
  }
  world.insert_points(b, drifted);
  world.apply_anchor_corrections({{b, true_b}});
  double worst = 0.0;
  const GaussianCloud wa = world.world_points(a);
  const GaussianCloud wb = world.world_points(b);
  for (size_t i = 0; i < truth_b.size(); ++i)
  {
    worst = std::max({worst, (wb[i].mu - truth_b[i].mu).norm(), (wa[i].mu - truth_a[i].mu).norm()});
  }
  o.require(worst <= 1e-6, fmt("realignment error %.3g", worst));

  // Persistence: save, load, save again; every file identical.
  for (const auto& [id, s] : store.submaps())
  {
    if (s.loaded && s.point_count > 1)
    {
      store.set_hierarchy(id, build_hierarchy(s.points, HierarchyConfig{}));
    }
  }
  store.save(root / "p1");
  SubmapStore::load(root / "p1").save(root / "p2");
  size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(root / "p1"))
  {
    ++files;
    o.require(bytes_of(e.path()) == bytes_of(root / "p2" / e.path().filename()),
              "persistence round trip changed " + e.path().filename().string());
  }
  if (o.pass)
  {
    o.detail = fmt("100 steps, %.0f submaps; realignment error %.1g; %.0f files bit-exact",
                   static_cast<double>(store.submaps().size()), worst, static_cast<double>(files));
  }
  return o;
}

// 10: end-to-end mission.
Outcome mission()
{
  Outcome o;
  const MissionConfig cfg;
  const auto t0 = Clock::now();
  const MissionOutput first = run_mission(cfg);
  const double t = seconds_since(t0);
  const MissionOutput second = run_mission(cfg);
  const MissionReport& r = first.report;
  o.require(r.success, "mission outcome " + r.outcome);
  o.require(r.competitive_ratio >= 0.4, fmt("competitive ratio %.3f", r.competitive_ratio));
  o.require(r.safety_ok && r.max_audit_probability <= cfg.collision.eta,
            fmt("audit max probability %.3g", r.max_audit_probability));
  o.require(t < 300.0, fmt("runtime %.1f s", t));
  o.require(report_to_json(r).dump() == report_to_json(second.report).dump() &&
                first.logs.trajectory == second.logs.trajectory &&
                first.logs.plans == second.logs.plans,
            "two runs differ");
  if (o.pass)
  {
    o.detail = fmt("SP %.2f m / PL %.2f m = %.3f", r.shortest_path, r.path_length,
                   r.competitive_ratio) +
               fmt(", max audit p %.2g, %.1f s", r.max_audit_probability, t);
  }
  return o;
}
}  // namespace

int main()
{
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"collision math vs Monte Carlo", collision_math},
      {"union bound conservativeness", union_bound},
      {"locality radius vs grid scan", r_loc},
      {"budgeted planner exactness", discrete_planner},
      {"primitive integration", primitives},
      {"A* sanity", a_star},
      {"feature codec", codec},
      {"cluster hierarchy", hierarchy},
      {"submap store", submaps},
      {"end-to-end mission", mission},
  };
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i)
  {
    Outcome o;
    try
    {
      o = criteria[i].second();
    }
    catch (const std::exception& e)
    {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
