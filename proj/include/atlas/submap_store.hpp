#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "atlas/semantic_hierarchy.hpp"
#include "atlas/splat_map.hpp"

namespace atlas
{
class SubmapError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Anchor-posed chunk of the map. `points` are in the anchor frame.
struct Submap
{
  uint64_t id = 0;
  Pose anchor = Pose::Identity();
  GaussianCloud points;
  std::optional<ClusterNode> hierarchy;
  bool loaded = true;
  /// Number of points, also valid while the payload is spilled to disk.
  size_t point_count = 0;
  /// Bumped on every insertion; lets callers re-cluster lazily.
  uint64_t revision = 0;

  Vec3 anchor_position() const { return anchor.translation(); }
};

struct LoadDelta
{
  std::vector<uint64_t> loaded;
  std::vector<uint64_t> unloaded;
};

class SubmapStore
{
public:
  SubmapStore(double r_submap, double r_load,
              std::optional<std::filesystem::path> spill_dir = std::nullopt);

  /// Id of the nearest anchor within r_submap of the robot, or a new submap
  /// anchored at `robot_pose`.
  uint64_t ensure_submap(const Pose& robot_pose);

  /// Transform world-frame Gaussians into the submap's anchor frame and append.
  void insert_points(uint64_t id, std::span<const GaussianPoint> world_points);

  /// Replace the stored points (anchor frame) of a loaded submap.
  void replace_points(uint64_t id, GaussianCloud local_points);

  /// Load exactly the submaps whose anchor lies within r_load of the robot.
  LoadDelta refresh_loaded(const Vec3& robot_position);

  /// Replace anchors; anchor-local content is untouched.
  void apply_anchor_corrections(const std::map<uint64_t, Pose>& corrections);

  /// World-frame points of all loaded submaps, in id order.
  GaussianCloud local_map() const;
  /// World-frame points of every submap, reading spilled payloads from disk.
  GaussianCloud global_map() const;
  GaussianCloud world_points(uint64_t id) const;

  size_t resident_count() const;
  size_t global_count() const;

  bool contains(uint64_t id) const { return submaps_.count(id) != 0; }
  const Submap& submap(uint64_t id) const;
  const std::map<uint64_t, Submap>& submaps() const { return submaps_; }
  void set_hierarchy(uint64_t id, ClusterNode root);
  ClusterNode* hierarchy(uint64_t id);

  double r_submap() const { return r_submap_; }
  double r_load() const { return r_load_; }
  void set_r_load(double r_load) { r_load_ = r_load; }

  /// Directory layout: store.json index plus one submap_<id>.atls per submap.
  void save(const std::filesystem::path& dir) const;
  static SubmapStore load(const std::filesystem::path& dir);

private:
  Submap& mutable_submap(uint64_t id);
  std::filesystem::path spill_path(uint64_t id) const;
  void spill(Submap& s);
  void restore(Submap& s);
  GaussianCloud stored_points(const Submap& s) const;

  double r_submap_;
  double r_load_;
  std::optional<std::filesystem::path> spill_dir_;
  std::map<uint64_t, Submap> submaps_;
  uint64_t next_id_ = 0;
};

/// Submap file ("ATLS"): header {magic, u32 version, u64 id, 12 f64 anchor
/// rows}, u64 point count, u32 feature length, float32 point records, then
/// the hierarchy as a preorder node list (u64 node count, 0 = none).
void write_submap(std::ostream& out, const Submap& submap);
Submap read_submap(std::istream& in);
void save_submap(const std::filesystem::path& path, const Submap& submap);
Submap load_submap(const std::filesystem::path& path);

}  // namespace atlas
