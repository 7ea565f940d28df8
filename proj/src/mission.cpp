#include "atlas/mission.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "atlas/binary_io.hpp"

namespace atlas
{
namespace
{
using nlohmann::json;

template <typename T>
void take(const json& j, const char* key, T& field)
{
  if (j.contains(key))
  {
    field = j.at(key).get<T>();
  }
}

VecX vec_from_json(const json& j)
{
  if (!j.is_array() || j.empty())
  {
    throw ConfigError("expected a nonempty number array");
  }
  VecX v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i)
  {
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

json vec_to_json(const VecX& v)
{
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Pose ground_pose(const RobotState& s)
{
  Pose pose = Pose::Identity();
  pose.linear() = Eigen::AngleAxisd(s.theta, Vec3::UnitZ()).toRotationMatrix();
  pose.translation() = Vec3(s.p.x(), s.p.y(), 0.0);
  return pose;
}

double point_box_distance_2d(const Vec2& p, const SceneBox& b)
{
  const Vec2 lo = b.min.head<2>();
  const Vec2 hi = b.max.head<2>();
  const Vec2 d = (lo - p).cwiseMax(p - hi).cwiseMax(Vec2::Zero());
  return d.norm();
}

// Zero leaves below `floor` or within `radius` of a consumed vantage point,
// then restore the sum rule on internal nodes.
double mask_utilities(ClusterNode& node, const Pose& anchor, const std::vector<Vec2>& consumed,
                      double radius, double floor)
{
  if (node.is_leaf())
  {
    const Vec2 p = (anchor * node.centroid).head<2>();
    const bool near = std::any_of(consumed.begin(), consumed.end(),
                                  [&](const Vec2& c) { return (c - p).norm() <= radius; });
    if (node.utility < floor || near)
    {
      node.utility = 0.0;
    }
    return node.utility;
  }
  double sum = 0.0;
  for (ClusterNode& c : node.children)
  {
    sum += mask_utilities(c, anchor, consumed, radius, floor);
  }
  node.utility = sum;
  return sum;
}

Vec2 clamp_to(const Vec2& p, const PlanBounds& b, double margin)
{
  return p.cwiseMax(b.min + Vec2::Constant(margin)).cwiseMin(b.max - Vec2::Constant(margin));
}

// Goal toward the deepest direction along the image row through the
// principal point; turn around when nothing is open ahead.
Vec2 exploration_goal(const Frame& frame, const CameraModel& cam, const RobotState& robot,
                      const MissionConfig& cfg, const PlanBounds& bounds)
{
  const int v = static_cast<int>(std::lround(cam.cy));
  int best_u = -1;
  double best_depth = -1.0;
  for (int u = 0; u < cam.width; ++u)
  {
    double d = frame.depth.at(u, v);
    if (d <= 0.0)
    {
      d = cam.max_depth;
    }
    const bool closer_to_centre = std::abs(u - cam.cx) < std::abs(best_u - cam.cx);
    if (d > best_depth || (d == best_depth && closer_to_centre))
    {
      best_depth = d;
      best_u = u;
    }
  }
  const double reach = std::min(cfg.horizon, best_depth - 1.0);
  const Vec2 heading(std::cos(robot.theta), std::sin(robot.theta));
  if (reach < cfg.goal_radius + 0.5)
  {
    return clamp_to(robot.p - 2.0 * heading, bounds, 0.1);
  }
  const Vec3 ray = frame.pose.linear() * Vec3((best_u - cam.cx) / cam.fx, 0.0, 1.0);
  Vec2 dir = ray.head<2>();
  dir = dir.norm() > 0.0 ? Vec2(dir.normalized()) : heading;
  return clamp_to(robot.p + reach * dir, bounds, 0.1);
}
}  // namespace

int MissionRates::ticks_per_map() const
{
  if (!(map_hz > 0.0) || !(continuous_hz > 0.0) || discrete_every_n_map_iters < 1)
  {
    throw ConfigError("rates must be positive");
  }
  const double ratio = continuous_hz / map_hz;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9)
  {
    throw ConfigError("continuous_hz must be a whole multiple of map_hz");
  }
  return static_cast<int>(rounded);
}

void MissionConfig::validate() const
{
  scene.validate();
  camera.validate();
  collision.validate();
  lattice.validate();
  rates.ticks_per_map();
  if (backproject_stride < 1 || !(merge_voxel > 0.0) || !(r_submap > 0.0) || !(r_load > 0.0) ||
      !(horizon > 0.0) || !(goal_radius > 0.0) || !(d_wire > 0.0) || !(budget >= 0.0) ||
      max_ticks < 1 || max_stuck_ticks < 1 || !(sp_resolution > 0.0) || !(sp_clearance >= 0.0) ||
      !(dynamics_noise >= 0.0))
  {
    throw ConfigError("invalid mission config");
  }
  const TerminationConfig& t = termination;
  if (!(t.gate_threshold >= 0.0 && t.gate_threshold <= 1.0) ||
      !(t.oracle_threshold >= 0.0 && t.oracle_threshold <= 1.0) || !(t.min_fraction >= 0.0) ||
      !(t.mask_depth > 0.0) || !(t.success_radius > 0.0))
  {
    throw ConfigError("invalid termination config");
  }
  if (task_embedding && task_embedding->size() != scene.feature_dim)
  {
    throw ConfigError("task embedding length does not match the feature dimension");
  }
  if (retask && retask->embedding.size() != scene.feature_dim)
  {
    throw ConfigError("retask embedding length does not match the feature dimension");
  }
}

MissionConfig mission_config_from_json(const json& j)
{
  MissionConfig cfg;
  try
  {
    if (j.contains("scene"))
    {
      cfg.scene = scene_from_json(j.at("scene"));
    }
    if (j.contains("camera"))
    {
      cfg.camera = camera_from_json(j.at("camera"));
    }
    take(j, "backproject_stride", cfg.backproject_stride);
    take(j, "merge_voxel", cfg.merge_voxel);
    take(j, "r_submap", cfg.r_submap);
    take(j, "r_load", cfg.r_load);
    if (j.contains("hierarchy"))
    {
      const json& h = j.at("hierarchy");
      take(h, "lambda", cfg.hierarchy.lambda);
      take(h, "cut_object", cfg.hierarchy.cut_object);
      take(h, "cut_region", cfg.hierarchy.cut_region);
      take(h, "max_points", cfg.hierarchy.max_points);
      take(h, "proxy_voxel", cfg.hierarchy.proxy_voxel);
    }
    if (j.contains("collision"))
    {
      const json& c = j.at("collision");
      take(c, "r_coll", cfg.collision.r_coll);
      take(c, "sigma_rob", cfg.collision.sigma_rob);
      take(c, "eta", cfg.collision.eta);
      take(c, "p_tol", cfg.collision.p_tol);
      take(c, "sigma_avg", cfg.collision.sigma_avg);
      take(c, "rho", cfg.collision.rho);
      take(c, "n_total", cfg.collision.n_total);
      take(c, "z_rob", cfg.checker.z_rob);
      take(c, "ground_height", cfg.checker.ground_height);
    }
    if (j.contains("lattice"))
    {
      const json& l = j.at("lattice");
      take(l, "n_v", cfg.lattice.n_v);
      take(l, "n_omega", cfg.lattice.n_omega);
      take(l, "dt", cfg.lattice.dt);
      take(l, "v_max", cfg.lattice.v_max);
      take(l, "omega_max", cfg.lattice.omega_max);
      take(l, "lambda_t", cfg.lattice.lambda_t);
      take(l, "substeps", cfg.lattice.substeps);
      take(l, "position_resolution", cfg.lattice.position_resolution);
      take(l, "heading_bins", cfg.lattice.heading_bins);
      take(l, "max_expansions", cfg.lattice.max_expansions);
    }
    take(j, "horizon", cfg.horizon);
    take(j, "goal_radius", cfg.goal_radius);
    take(j, "d_wire", cfg.d_wire);
    take(j, "budget", cfg.budget);
    take(j, "budget_remainder", cfg.budget_remainder);
    take(j, "min_utility", cfg.min_utility);
    if (j.contains("rates"))
    {
      const json& r = j.at("rates");
      take(r, "map_hz", cfg.rates.map_hz);
      take(r, "discrete_every_n_map_iters", cfg.rates.discrete_every_n_map_iters);
      take(r, "continuous_hz", cfg.rates.continuous_hz);
    }
    if (j.contains("termination"))
    {
      const json& t = j.at("termination");
      take(t, "gate_threshold", cfg.termination.gate_threshold);
      take(t, "oracle_threshold", cfg.termination.oracle_threshold);
      take(t, "min_fraction", cfg.termination.min_fraction);
      take(t, "mask_depth", cfg.termination.mask_depth);
      take(t, "success_radius", cfg.termination.success_radius);
    }
    take(j, "max_ticks", cfg.max_ticks);
    take(j, "max_stuck_ticks", cfg.max_stuck_ticks);
    take(j, "seed", cfg.seed);
    take(j, "dynamics_noise", cfg.dynamics_noise);
    take(j, "sp_resolution", cfg.sp_resolution);
    take(j, "sp_clearance", cfg.sp_clearance);
    if (j.contains("task_embedding"))
    {
      cfg.task_embedding = vec_from_json(j.at("task_embedding"));
    }
    if (j.contains("retask"))
    {
      RetaskEvent r;
      r.step = j.at("retask").at("step").get<int>();
      r.embedding = vec_from_json(j.at("retask").at("embedding"));
      cfg.retask = r;
    }
  }
  catch (const json::exception& e)
  {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  catch (const std::invalid_argument& e)
  {
    throw ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

json mission_config_to_json(const MissionConfig& cfg)
{
  json j = {
      {"scene", scene_to_json(cfg.scene)},
      {"camera", camera_to_json(cfg.camera)},
      {"backproject_stride", cfg.backproject_stride},
      {"merge_voxel", cfg.merge_voxel},
      {"r_submap", cfg.r_submap},
      {"r_load", cfg.r_load},
      {"hierarchy",
       {{"lambda", cfg.hierarchy.lambda},
        {"cut_object", cfg.hierarchy.cut_object},
        {"cut_region", cfg.hierarchy.cut_region},
        {"max_points", cfg.hierarchy.max_points},
        {"proxy_voxel", cfg.hierarchy.proxy_voxel}}},
      {"collision",
       {{"r_coll", cfg.collision.r_coll},
        {"sigma_rob", cfg.collision.sigma_rob},
        {"eta", cfg.collision.eta},
        {"p_tol", cfg.collision.p_tol},
        {"sigma_avg", cfg.collision.sigma_avg},
        {"rho", cfg.collision.rho},
        {"n_total", cfg.collision.n_total},
        {"z_rob", cfg.checker.z_rob},
        {"ground_height", cfg.checker.ground_height}}},
      {"lattice",
       {{"n_v", cfg.lattice.n_v},
        {"n_omega", cfg.lattice.n_omega},
        {"dt", cfg.lattice.dt},
        {"v_max", cfg.lattice.v_max},
        {"omega_max", cfg.lattice.omega_max},
        {"lambda_t", cfg.lattice.lambda_t},
        {"substeps", cfg.lattice.substeps},
        {"position_resolution", cfg.lattice.position_resolution},
        {"heading_bins", cfg.lattice.heading_bins},
        {"max_expansions", cfg.lattice.max_expansions}}},
      {"horizon", cfg.horizon},
      {"goal_radius", cfg.goal_radius},
      {"d_wire", cfg.d_wire},
      {"budget", cfg.budget},
      {"budget_remainder", cfg.budget_remainder},
      {"min_utility", cfg.min_utility},
      {"rates",
       {{"map_hz", cfg.rates.map_hz},
        {"discrete_every_n_map_iters", cfg.rates.discrete_every_n_map_iters},
        {"continuous_hz", cfg.rates.continuous_hz}}},
      {"termination",
       {{"gate_threshold", cfg.termination.gate_threshold},
        {"oracle_threshold", cfg.termination.oracle_threshold},
        {"min_fraction", cfg.termination.min_fraction},
        {"mask_depth", cfg.termination.mask_depth},
        {"success_radius", cfg.termination.success_radius}}},
      {"max_ticks", cfg.max_ticks},
      {"max_stuck_ticks", cfg.max_stuck_ticks},
      {"seed", cfg.seed},
      {"dynamics_noise", cfg.dynamics_noise},
      {"sp_resolution", cfg.sp_resolution},
      {"sp_clearance", cfg.sp_clearance},
  };
  if (cfg.task_embedding)
  {
    j["task_embedding"] = vec_to_json(*cfg.task_embedding);
  }
  if (cfg.retask)
  {
    j["retask"] = {{"step", cfg.retask->step}, {"embedding", vec_to_json(cfg.retask->embedding)}};
  }
  return j;
}

MissionConfig load_mission_config(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
  {
    throw ConfigError("cannot open config " + path.string());
  }
  json j;
  try
  {
    j = json::parse(in);
  }
  catch (const json::exception& e)
  {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return mission_config_from_json(j);
}

Raster pixel_relevancy(const Frame& frame, const RelevancyQuery& query)
{
  Raster out(frame.depth.width, frame.depth.height, 1);
  if (frame.features.channels() != query.compressed_dim())
  {
    throw CodecError("frame feature channels do not match the basis");
  }
  for (Eigen::Index i = 0; i < frame.depth.data.cols(); ++i)
  {
    if (frame.depth.data(0, i) > 0.0)
    {
      out.data(0, i) = query.evaluate(frame.features.data.col(i));
    }
  }
  return out;
}

double masked_max_relevancy(const Raster& relevancy, const Raster& depth, double mask_depth)
{
  double best = 0.0;
  for (Eigen::Index i = 0; i < depth.data.cols(); ++i)
  {
    const double d = depth.data(0, i);
    if (d > 0.0 && d <= mask_depth)
    {
      best = std::max(best, relevancy.data(0, i));
    }
  }
  return best;
}

OracleDecision ThresholdOracle::decide(int step, const Raster& relevancy, const Raster& depth)
{
  size_t masked = 0;
  size_t hits = 0;
  for (Eigen::Index i = 0; i < depth.data.cols(); ++i)
  {
    const double d = depth.data(0, i);
    if (d > 0.0 && d <= cfg_.mask_depth)
    {
      ++masked;
      hits += relevancy.data(0, i) >= cfg_.oracle_threshold ? 1 : 0;
    }
  }
  const double fraction = masked ? static_cast<double>(hits) / static_cast<double>(masked) : 0.0;
  return record({step, fraction, masked > 0 && fraction >= cfg_.min_fraction});
}

OracleDecision RecordedOracle::decide(int step, const Raster&, const Raster&)
{
  const auto it = answers_.find(step);
  const bool verdict = it != answers_.end() ? it->second : fallback_;
  return record({step, verdict ? 1.0 : 0.0, verdict});
}

double compute_shortest_path(const SparseGraph& graph, size_t start, size_t goal)
{
  if (goal >= graph.size())
  {
    throw std::out_of_range("goal vertex not in graph");
  }
  return dijkstra(graph, start)[goal];
}

size_t FreeSpaceGrid::nearest(const Vec2& p) const
{
  if (graph.size() == 0)
  {
    throw std::runtime_error("free-space grid is empty");
  }
  size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < graph.size(); ++i)
  {
    const double d = (graph.vertex(i).position.head<2>() - p).squaredNorm();
    if (d < best_d)
    {
      best_d = d;
      best = i;
    }
  }
  return best;
}

FreeSpaceGrid build_free_space_grid(const SceneSpec& spec, double resolution, double clearance)
{
  FreeSpaceGrid grid;
  grid.resolution = resolution;
  const auto nx = static_cast<int>(std::floor((spec.bounds_max.x() - spec.bounds_min.x()) / resolution)) + 1;
  const auto ny = static_cast<int>(std::floor((spec.bounds_max.y() - spec.bounds_min.y()) / resolution)) + 1;
  auto centre = [&](int i, int j) {
    return Vec2(spec.bounds_min.x() + i * resolution, spec.bounds_min.y() + j * resolution);
  };
  auto free = [&](const Vec2& p) {
    return std::all_of(spec.boxes.begin(), spec.boxes.end(), [&](const SceneBox& b) {
      return !b.obstacle || point_box_distance_2d(p, b) >= clearance;
    });
  };
  std::vector<int64_t> vertex(static_cast<size_t>(nx) * static_cast<size_t>(ny), -1);
  auto cell = [&](int i, int j) -> int64_t& { return vertex[static_cast<size_t>(j) * nx + i]; };
  for (int j = 0; j < ny; ++j)
  {
    for (int i = 0; i < nx; ++i)
    {
      const Vec2 c = centre(i, j);
      if (free(c))
      {
        GraphVertex v;
        v.position = Vec3(c.x(), c.y(), 0.0);
        cell(i, j) = static_cast<int64_t>(grid.graph.add_vertex(v));
      }
    }
  }
  // 16-neighbourhood: king moves plus knight moves.
  const int offsets[8][2] = {{1, 0}, {0, 1}, {1, 1}, {1, -1}, {2, 1}, {1, 2}, {2, -1}, {1, -2}};
  for (int j = 0; j < ny; ++j)
  {
    for (int i = 0; i < nx; ++i)
    {
      if (cell(i, j) < 0)
      {
        continue;
      }
      for (const auto& o : offsets)
      {
        const int i2 = i + o[0];
        const int j2 = j + o[1];
        if (i2 < 0 || i2 >= nx || j2 < 0 || j2 >= ny || cell(i2, j2) < 0)
        {
          continue;
        }
        const Vec2 a = centre(i, j);
        const Vec2 b = centre(i2, j2);
        if (!free(0.5 * (a + b)))
        {
          continue;
        }
        grid.graph.add_edge(static_cast<size_t>(cell(i, j)), static_cast<size_t>(cell(i2, j2)),
                            (b - a).norm());
      }
    }
  }
  return grid;
}

double privileged_shortest_path(const FreeSpaceGrid& grid, const Vec2& start, const Vec2& goal,
                                double radius)
{
  const size_t s = grid.nearest(start);
  const std::vector<double> dist = dijkstra(grid.graph, s);
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < grid.graph.size(); ++i)
  {
    if ((grid.graph.vertex(i).position.head<2>() - goal).norm() <= radius)
    {
      best = std::min(best, dist[i]);
    }
  }
  return best;
}

uint64_t store_structure_hash(const SubmapStore& store)
{
  uint64_t h = 1469598103934665603ULL;
  for (const auto& [id, s] : store.submaps())
  {
    if (!s.hierarchy)
    {
      continue;
    }
    for (uint64_t word : {id, structure_hash(*s.hierarchy)})
    {
      for (int k = 0; k < 8; ++k)
      {
        h ^= (word >> (8 * k)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

json report_to_json(const MissionReport& r)
{
  json memory = json::array();
  for (const MemorySample& m : r.memory)
  {
    memory.push_back({{"step", m.step},
                      {"resident", m.resident},
                      {"global", m.global},
                      {"submaps", m.submaps},
                      {"loaded_submaps", m.loaded_submaps}});
  }
  json decisions = json::array();
  for (const OracleDecision& d : r.decisions)
  {
    decisions.push_back({{"step", d.step}, {"score", d.score}, {"verdict", d.verdict}});
  }
  json j = {
      {"success", r.success},
      {"outcome", r.outcome},
      {"termination_step", r.termination_step},
      {"ticks", r.ticks},
      {"path_length", r.path_length},
      {"shortest_path", r.shortest_path},
      {"competitive_ratio", r.competitive_ratio},
      {"trajectory_cost", r.trajectory_cost},
      {"r_loc", r.r_loc},
      {"invocations",
       {{"mapper", r.mapper_calls},
        {"discrete", r.discrete_calls},
        {"continuous", r.continuous_calls}}},
      {"infeasible_plans", r.infeasible_plans},
      {"exploration_ticks", r.exploration_ticks},
      {"horizon_fallbacks", r.horizon_fallbacks},
      {"oracle_queries", r.oracle_queries},
      {"safety", {{"max_probability", r.max_audit_probability}, {"ok", r.safety_ok}}},
      {"final_position", {r.final_position.x(), r.final_position.y()}},
      {"target", {r.target.x(), r.target.y(), r.target.z()}},
      {"memory", memory},
      {"decisions", decisions},
  };
  if (r.retask)
  {
    j["retask"] = {{"step", r.retask->step},
                   {"hash_before", r.retask->hash_before},
                   {"hash_after", r.retask->hash_after},
                   {"hierarchies", r.retask->hierarchies}};
  }
  return j;
}

MissionOutput run_mission(const MissionConfig& cfg, TerminationOracle* oracle)
{
  cfg.validate();
  const Scene scene = build_scene(cfg.scene);
  ThresholdOracle default_oracle(cfg.termination);
  TerminationOracle& judge = oracle ? *oracle : default_oracle;

  VecX task = cfg.task_embedding ? *cfg.task_embedding : scene.embeddings.at(scene.spec.target_label);
  auto query = std::make_unique<RelevancyQuery>(scene.basis, task);
  TaskQuery task_query{task, std::nullopt};

  MissionOutput out;
  out.basis = scene.basis;
  MissionReport& report = out.report;
  report.target = scene.target_center();
  report.r_loc = compute_r_loc(cfg.collision);
  const double r_loc = std::max(report.r_loc, kRLocResolution);

  PlanBounds bounds{scene.spec.bounds_min, scene.spec.bounds_max};
  const int ticks_per_map = cfg.rates.ticks_per_map();
  const double tick = 1.0 / cfg.rates.continuous_hz;
  LatticeConfig lattice = cfg.lattice;
  lattice.dt = std::min(lattice.dt, tick);

  std::ostringstream traj_log;
  std::ostringstream plan_log;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  SubmapStore store(cfg.r_submap, cfg.r_load);
  std::map<uint64_t, uint64_t> clustered_revision;
  RobotState robot{scene.spec.start, scene.spec.start_heading};
  BudgetedPath path;
  std::vector<Vec2> consumed;
  std::optional<CollisionChecker> checker;
  Frame last_frame;
  double cum_cost = 0.0;
  double sim_time = 0.0;
  int map_iter = 0;
  int stuck = 0;

  write_trajectory(traj_log, robot, {}, 0.0, 0.0, true);

  for (int step = 0; step < cfg.max_ticks; ++step)
  {
    report.ticks = step + 1;

    if (cfg.retask && cfg.retask->step == step)
    {
      RetaskRecord rec;
      rec.step = step;
      rec.hash_before = store_structure_hash(store);
      task = cfg.retask->embedding;
      query = std::make_unique<RelevancyQuery>(scene.basis, task);
      task_query = TaskQuery{task, std::nullopt};
      score_store(store, task_query, scene.basis);
      rec.hash_after = store_structure_hash(store);
      for (const auto& [id, s] : store.submaps())
      {
        rec.hierarchies += s.hierarchy ? 1 : 0;
      }
      report.retask = rec;
    }

    if (step % ticks_per_map == 0)
    {
      ++report.mapper_calls;
      const Pose cam_pose = ground_camera_pose(robot.p, robot.theta, scene.spec.camera_height);
      last_frame = render_frame(scene, cfg.camera, cam_pose);
      const GaussianCloud seen =
          backproject_init(last_frame, cfg.camera, cfg.backproject_stride, cfg.splat);
      const Vec3 robot3(robot.p.x(), robot.p.y(), 0.0);
      store.refresh_loaded(robot3);
      const uint64_t id = store.ensure_submap(ground_pose(robot));
      store.insert_points(id, seen);
      store.replace_points(id, prune_merge(store.submap(id).points, cfg.merge_voxel));
      checker.emplace(store.local_map(), cfg.collision, r_loc, cfg.checker);

      MemorySample m;
      m.step = step;
      m.resident = store.resident_count();
      m.global = store.global_count();
      m.submaps = store.submaps().size();
      for (const auto& [sid, s] : store.submaps())
      {
        m.loaded_submaps += s.loaded ? 1 : 0;
      }
      report.memory.push_back(m);

      // Termination on the fresh observation.
      const Raster rel = pixel_relevancy(last_frame, *query);
      if (masked_max_relevancy(rel, last_frame.depth, cfg.termination.mask_depth) >=
          cfg.termination.gate_threshold)
      {
        ++report.oracle_queries;
        if (judge.decide(step, rel, last_frame.depth).verdict)
        {
          report.termination_step = step;
          const double d = (robot.p - report.target.head<2>()).norm();
          report.success = d <= cfg.termination.success_radius;
          report.outcome = report.success ? "success" : "terminated_away_from_target";
          break;
        }
      }

      if (map_iter % cfg.rates.discrete_every_n_map_iters == 0)
      {
        ++report.discrete_calls;
        for (const auto& [sid, s] : store.submaps())
        {
          const auto it = clustered_revision.find(sid);
          if (s.loaded && s.point_count > 0 && (it == clustered_revision.end() || it->second != s.revision))
          {
            store.set_hierarchy(sid, build_hierarchy(s.points, cfg.hierarchy));
            clustered_revision[sid] = s.revision;
          }
        }
        score_store(store, task_query, scene.basis);
        for (const auto& [sid, s] : store.submaps())
        {
          if (ClusterNode* root = store.hierarchy(sid))
          {
            mask_utilities(*root, s.anchor, consumed, cfg.goal_radius, cfg.min_utility);
          }
        }
        const SparseGraph high = build_high_level(store, cfg.d_wire);
        path = BudgetedPath{};
        for (size_t v = 0; v < high.size(); ++v)
        {
          if (high.vertex(v).label != id)
          {
            continue;
          }
          const BudgetedPath high_path = plan_budgeted(high, v, cfg.budget);
          const RefinedPath refined =
              refine_within_partitions(store, high, high_path, cfg.budget_remainder);
          path = refined.path;
          std::ostringstream trace;
          write_path_trace(trace, refined.fine, refined.path);
          std::istringstream lines(trace.str());
          for (std::string line; std::getline(lines, line);)
          {
            json rec = json::parse(line);
            rec["step"] = step;
            plan_log << rec.dump() << '\n';
          }
          break;
        }
      }
      ++map_iter;
    }

    // Continuous planning.
    ++report.continuous_calls;
    GoalRegion goal{robot.p, cfg.goal_radius};
    bool exploring = false;
    std::optional<size_t> goal_index;
    while (true)
    {
      if (path.vertices.empty())
      {
        exploring = true;
        goal.center = exploration_goal(last_frame, cfg.camera, robot, cfg, bounds);
        break;
      }
      const HorizonGoal hg = select_horizon_goal(path, robot.p, cfg.horizon);
      if ((hg.center - robot.p).norm() <= cfg.goal_radius)
      {
        for (size_t i = 0; i <= hg.index; ++i)
        {
          consumed.push_back(path.positions[i].head<2>());
        }
        path.vertices.erase(path.vertices.begin(), path.vertices.begin() + static_cast<std::ptrdiff_t>(hg.index) + 1);
        path.positions.erase(path.positions.begin(), path.positions.begin() + static_cast<std::ptrdiff_t>(hg.index) + 1);
        continue;
      }
      report.horizon_fallbacks += hg.fallback ? 1 : 0;
      goal.center = clamp_to(hg.center, bounds, 0.0);
      goal_index = hg.index;
      break;
    }
    report.exploration_ticks += exploring ? 1 : 0;

    const PlanResult planned = plan(robot, goal, *checker, lattice, bounds);
    if (planned.status != PlanStatus::Success || planned.trajectory.empty())
    {
      ++report.infeasible_plans;
      if (goal_index)
      {
        // Unreachable vantage point: give it up.
        consumed.push_back(path.positions[*goal_index].head<2>());
        path.vertices.erase(path.vertices.begin() + static_cast<std::ptrdiff_t>(*goal_index));
        path.positions.erase(path.positions.begin() + static_cast<std::ptrdiff_t>(*goal_index));
      }
      if (++stuck >= cfg.max_stuck_ticks)
      {
        report.outcome = "stuck";
        break;
      }
      sim_time += tick;
      continue;
    }
    stuck = 0;

    // Execute the first primitive and audit every executed state against
    // the full snapshot the planner saw.
    const MotionPrimitive& first = planned.trajectory.primitives.front();
    for (const RobotState& s : first.samples)
    {
      const double p = state_collision_prob(s, checker->points(), cfg.collision, cfg.checker.z_rob);
      report.max_audit_probability = std::max(report.max_audit_probability, p);
      if (p > cfg.collision.eta)
      {
        report.safety_ok = false;
      }
    }
    Trajectory executed;
    executed.primitives.push_back(first);
    write_trajectory(traj_log, robot, executed, sim_time, cum_cost, false);
    report.path_length += std::abs(first.control.v) * first.duration;
    cum_cost += first.cost;
    sim_time += tick;
    robot = first.end_state;
    if (cfg.dynamics_noise > 0.0)
    {
      robot.p += cfg.dynamics_noise * Vec2(noise(rng), noise(rng));
    }
  }

  report.trajectory_cost = cum_cost;
  report.final_position = robot.p;
  report.decisions = judge.log();
  const FreeSpaceGrid grid = build_free_space_grid(scene.spec, cfg.sp_resolution, cfg.sp_clearance);
  report.shortest_path = privileged_shortest_path(grid, scene.spec.start, report.target.head<2>(),
                                                  cfg.termination.success_radius);
  if (report.success && report.path_length > 0.0 && std::isfinite(report.shortest_path))
  {
    report.competitive_ratio = report.shortest_path / report.path_length;
  }
  out.logs.trajectory = traj_log.str();
  out.logs.plans = plan_log.str();
  out.store.emplace(std::move(store));
  return out;
}

void write_mission_output(const std::filesystem::path& dir, const MissionOutput& out)
{
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "report.json") << report_to_json(out.report).dump(2) << '\n';
  std::ofstream(dir / "trajectory.jsonl") << out.logs.trajectory;
  std::ofstream(dir / "plans.jsonl") << out.logs.plans;
  save_basis(dir / "basis.atlf", out.basis);
  if (out.store)
  {
    out.store->save(dir / "store");
  }
}

json replay_to_json(const ReplayReport& r)
{
  json frames = json::array();
  for (const ReplayFrameRecord& f : r.frames)
  {
    frames.push_back({{"frame", f.frame},
                      {"resident", f.resident},
                      {"global", f.global},
                      {"max_relevancy", f.max_relevancy},
                      {"gated", f.gated},
                      {"verdict", f.verdict}});
  }
  json top = json::array();
  for (const RetrievedNode& n : r.top)
  {
    top.push_back({{"submap", n.submap_id},
                   {"node", n.preorder_index},
                   {"level", to_string(n.level)},
                   {"centroid", {n.world_centroid.x(), n.world_centroid.y(), n.world_centroid.z()}},
                   {"members", n.member_count},
                   {"score", n.score}});
  }
  return {{"frames", frames}, {"top", top}, {"first_positive", r.first_positive}};
}

ReplayReport replay_dataset(const Dataset& dataset, const MissionConfig& cfg, const VecX& task,
                            TerminationOracle& oracle, int top_k)
{
  const RelevancyQuery query(dataset.basis, task);
  SubmapStore store(cfg.r_submap, cfg.r_load);
  ReplayReport report;
  for (size_t i = 0; i < dataset.poses.size(); ++i)
  {
    const Frame frame = dataset.frame(i);
    const Vec3 forward = frame.pose.linear().col(2);
    const RobotState robot{frame.pose.translation().head<2>(), std::atan2(forward.y(), forward.x())};
    store.refresh_loaded(Vec3(robot.p.x(), robot.p.y(), 0.0));
    const uint64_t id = store.ensure_submap(ground_pose(robot));
    store.insert_points(id, backproject_init(frame, dataset.camera, cfg.backproject_stride, cfg.splat));
    store.replace_points(id, prune_merge(store.submap(id).points, cfg.merge_voxel));

    ReplayFrameRecord rec;
    rec.frame = i;
    rec.resident = store.resident_count();
    rec.global = store.global_count();
    const Raster rel = pixel_relevancy(frame, query);
    rec.max_relevancy = masked_max_relevancy(rel, frame.depth, cfg.termination.mask_depth);
    rec.gated = rec.max_relevancy >= cfg.termination.gate_threshold;
    if (rec.gated)
    {
      rec.verdict = oracle.decide(static_cast<int>(i), rel, frame.depth).verdict;
      if (rec.verdict && report.first_positive < 0)
      {
        report.first_positive = static_cast<int>(i);
      }
    }
    report.frames.push_back(rec);
  }
  // Payloads of unloaded submaps stay in memory without a spill directory.
  for (const auto& [sid, s] : store.submaps())
  {
    if (!s.points.empty())
    {
      store.set_hierarchy(sid, build_hierarchy(s.points, cfg.hierarchy));
    }
  }
  report.top = top_k_retrieve(store, TaskQuery{task, std::nullopt}, dataset.basis, top_k);
  return report;
}

}  // namespace atlas
