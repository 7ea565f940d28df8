#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlas/collision.hpp"
#include "atlas/continuous_planner.hpp"
#include "atlas/discrete_planner.hpp"
#include "atlas/semantic_hierarchy.hpp"
#include "atlas/splat_map.hpp"
#include "atlas/submap_store.hpp"
#include "atlas/synthetic_scene.hpp"

namespace atlas
{
class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Rates in simulated time. One tick lasts 1 / continuous_hz seconds.
struct MissionRates
{
  double map_hz = 1.0;
  int discrete_every_n_map_iters = 5;
  double continuous_hz = 1.0;

  /// Ticks between mapper invocations; throws unless it is a whole number.
  int ticks_per_map() const;
};

struct TerminationConfig
{
  /// The oracle is only asked when the masked maximum relevancy reaches this.
  double gate_threshold = 0.55;
  /// Pixel relevancy the threshold oracle counts as a hit.
  double oracle_threshold = 0.8;
  /// Fraction of masked pixels that must be hits.
  double min_fraction = 0.02;
  /// Pixels farther than this (or without depth) are masked out.
  double mask_depth = 2.0;
  /// A positive verdict counts as success within this distance of the target.
  double success_radius = 2.5;
};

struct RetaskEvent
{
  int step = 0;
  VecX embedding;
};

struct MissionConfig
{
  SceneSpec scene = corridor_scene();
  CameraModel camera;
  SplatOptions splat;
  int backproject_stride = 4;
  double merge_voxel = 0.1;

  double r_submap = 3.0;
  double r_load = 6.0;
  HierarchyConfig hierarchy{1.0, 0.8, 2.5, 1500, 0.25};

  CollisionConfig collision;
  CheckerOptions checker{0.3, 0.05};
  LatticeConfig lattice;

  double horizon = 5.0;
  double goal_radius = 1.0;
  double d_wire = 6.0;
  double budget = 30.0;
  double budget_remainder = 5.0;
  /// Object utilities below this are treated as zero when planning.
  double min_utility = 0.05;

  MissionRates rates;
  TerminationConfig termination;
  int max_ticks = 120;
  /// Consecutive ticks without a feasible plan before giving up.
  int max_stuck_ticks = 10;
  uint64_t seed = 1;
  /// Standard deviation of the per-tick position noise (0 disables it).
  double dynamics_noise = 0.0;

  /// Task embedding; the scene's target label embedding when absent.
  std::optional<VecX> task_embedding;
  std::optional<RetaskEvent> retask;

  double sp_resolution = 0.1;
  double sp_clearance = 0.5;

  void validate() const;
};

MissionConfig mission_config_from_json(const nlohmann::json& j);
nlohmann::json mission_config_to_json(const MissionConfig& cfg);
MissionConfig load_mission_config(const std::filesystem::path& path);

/// Per-pixel task relevancy of a frame's compressed features; 0 where depth
/// is missing.
Raster pixel_relevancy(const Frame& frame, const RelevancyQuery& query);

/// Maximum relevancy over pixels with 0 < depth <= mask_depth (0 if none).
double masked_max_relevancy(const Raster& relevancy, const Raster& depth, double mask_depth);

struct OracleDecision
{
  int step = 0;
  double score = 0.0;
  bool verdict = false;
};

/// Decides whether the task is complete from the current observation.
class TerminationOracle
{
public:
  virtual ~TerminationOracle() = default;
  virtual OracleDecision decide(int step, const Raster& relevancy, const Raster& depth) = 0;

  const std::vector<OracleDecision>& log() const { return log_; }

protected:
  OracleDecision record(OracleDecision d)
  {
    log_.push_back(d);
    return d;
  }

private:
  std::vector<OracleDecision> log_;
};

/// Positive when the fraction of masked pixels with relevancy >= threshold
/// reaches min_fraction. The score is that fraction.
class ThresholdOracle : public TerminationOracle
{
public:
  explicit ThresholdOracle(TerminationConfig cfg) : cfg_(cfg) {}
  OracleDecision decide(int step, const Raster& relevancy, const Raster& depth) override;

private:
  TerminationConfig cfg_;
};

/// Scripted answers keyed by step; unknown steps answer `fallback`.
class RecordedOracle : public TerminationOracle
{
public:
  explicit RecordedOracle(std::map<int, bool> answers, bool fallback = false)
      : answers_(std::move(answers)), fallback_(fallback)
  {
  }
  OracleDecision decide(int step, const Raster& relevancy, const Raster& depth) override;

private:
  std::map<int, bool> answers_;
  bool fallback_;
};

/// Dijkstra distance from start to goal; +inf when disconnected.
double compute_shortest_path(const SparseGraph& graph, size_t start, size_t goal);

/// Privileged free-space graph: cell centres on a grid over the scene bounds
/// that keep `clearance` from every obstacle footprint, 16-neighbour edges
/// between free cells whose connecting segment stays free.
struct FreeSpaceGrid
{
  SparseGraph graph;
  double resolution = 0.1;

  /// Free vertex closest to p.
  size_t nearest(const Vec2& p) const;
};

FreeSpaceGrid build_free_space_grid(const SceneSpec& spec, double resolution, double clearance);

/// Shortest free-space path from `start` to any free cell within `radius`
/// of `goal`.
double privileged_shortest_path(const FreeSpaceGrid& grid, const Vec2& start, const Vec2& goal,
                                double radius);

struct MemorySample
{
  int step = 0;
  size_t resident = 0;
  size_t global = 0;
  size_t submaps = 0;
  size_t loaded_submaps = 0;
};

struct RetaskRecord
{
  int step = 0;
  uint64_t hash_before = 0;
  uint64_t hash_after = 0;
  size_t hierarchies = 0;
};

struct MissionReport
{
  bool success = false;
  std::string outcome = "timeout";
  int termination_step = -1;
  int ticks = 0;
  double path_length = 0.0;
  double shortest_path = 0.0;
  double competitive_ratio = 0.0;
  double trajectory_cost = 0.0;
  double r_loc = 0.0;

  size_t mapper_calls = 0;
  size_t discrete_calls = 0;
  size_t continuous_calls = 0;
  size_t infeasible_plans = 0;
  size_t exploration_ticks = 0;
  size_t horizon_fallbacks = 0;
  size_t oracle_queries = 0;

  double max_audit_probability = 0.0;
  bool safety_ok = true;

  Vec2 final_position = Vec2::Zero();
  Vec3 target = Vec3::Zero();
  std::vector<MemorySample> memory;
  std::vector<OracleDecision> decisions;
  std::optional<RetaskRecord> retask;
};

nlohmann::json report_to_json(const MissionReport& report);

struct MissionLogs
{
  /// Executed states, one JSON object per line.
  std::string trajectory;
  /// Discrete plans, one JSON object per vantage point.
  std::string plans;
};

struct MissionOutput
{
  MissionReport report;
  MissionLogs logs;
  std::optional<SubmapStore> store;
  PcaBasis basis;
};

/// Simulated find-the-object loop on the synthetic scene. Uses a threshold
/// oracle unless one is supplied.
MissionOutput run_mission(const MissionConfig& cfg, TerminationOracle* oracle = nullptr);

/// report.json, trajectory.jsonl, plans.jsonl, basis.atlf and store/.
void write_mission_output(const std::filesystem::path& dir, const MissionOutput& out);

/// Combined structure hash of every stored hierarchy, in submap id order.
uint64_t store_structure_hash(const SubmapStore& store);

struct ReplayFrameRecord
{
  size_t frame = 0;
  size_t resident = 0;
  size_t global = 0;
  double max_relevancy = 0.0;
  bool gated = false;
  bool verdict = false;
};

struct ReplayReport
{
  std::vector<ReplayFrameRecord> frames;
  std::vector<RetrievedNode> top;
  int first_positive = -1;
};

nlohmann::json replay_to_json(const ReplayReport& report);

/// Map a recorded dataset frame by frame and evaluate termination on each.
ReplayReport replay_dataset(const Dataset& dataset, const MissionConfig& cfg, const VecX& task,
                            TerminationOracle& oracle, int top_k = 5);

}  // namespace atlas
