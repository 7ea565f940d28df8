#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlas/feature_codec.hpp"
#include "atlas/splat_map.hpp"

namespace atlas
{
class SceneError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Axis-aligned box carrying one semantic label.
struct SceneBox
{
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();
  std::string label;
  Vec3 color = Vec3::Constant(0.5);
  /// False for the floor: it is seen and mapped but not an obstacle.
  bool obstacle = true;
};

/// Label embedding spec. A label with `related_to` gets cosine
/// `similarity` with that label; all other pairs are orthogonal.
struct SceneLabel
{
  std::string name;
  std::optional<std::string> related_to;
  double similarity = 0.0;
};

struct SceneSpec
{
  std::vector<SceneBox> boxes;
  std::vector<SceneLabel> labels;
  std::string target_label;
  Vec2 start = Vec2::Zero();
  double start_heading = 0.0;
  double camera_height = 0.5;
  Vec2 bounds_min = Vec2::Zero();
  Vec2 bounds_max = Vec2::Ones();
  int feature_dim = 512;
  int compressed_dim = 24;
  /// Samples per label used to fit the compression basis.
  int basis_samples = 64;
  double basis_noise = 0.05;
  uint64_t seed = 7;

  void validate() const;
};

/// Straight corridor with walls, floor, a crate, a related object and the
/// target object.
SceneSpec corridor_scene();

SceneSpec scene_from_json(const nlohmann::json& j);
nlohmann::json scene_to_json(const SceneSpec& spec);

struct Scene
{
  SceneSpec spec;
  std::map<std::string, VecX> embeddings;
  PcaBasis basis;
  /// encode(basis, embedding) per label.
  std::map<std::string, VecX> codes;

  const SceneBox* target_box() const;
  Vec3 target_center() const;
};

/// Label embeddings from a seeded random orthonormal frame.
std::map<std::string, VecX> label_embeddings(const SceneSpec& spec);

/// Incremental PCA fitted on noisy copies of every label embedding.
PcaBasis fit_scene_basis(const SceneSpec& spec, const std::map<std::string, VecX>& embeddings);

Scene build_scene(const SceneSpec& spec);

struct RayHit
{
  double t = 0.0;
  size_t box = 0;
};

/// Nearest intersection of origin + t * dir with any box, t in (0, t_max].
std::optional<RayHit> cast_ray(const SceneSpec& spec, const Vec3& origin, const Vec3& dir,
                               double t_max);

/// Analytic RGB-D-feature frame. Depth is the camera z of the hit; pixels
/// with no hit within max_depth get depth 0 and a zero feature.
Frame render_frame(const Scene& scene, const CameraModel& cam, const Pose& camera_to_world);

/// Camera poses along a straight line, `count` frames.
std::vector<Pose> line_trajectory(const Scene& scene, const Vec2& from, const Vec2& to, int count);

/// Dataset directory: camera.json, poses.txt ({id, 12 floats}), one
/// frame_<id>.atlf per frame (rows are pixels: r, g, b, depth, features) and
/// basis.atlf.
void write_dataset(const std::filesystem::path& dir, const CameraModel& cam,
                   const PcaBasis& basis, const std::vector<Pose>& poses,
                   const std::vector<Frame>& frames);

struct Dataset
{
  CameraModel camera;
  PcaBasis basis;
  std::vector<uint64_t> ids;
  std::vector<Pose> poses;

  Frame frame(size_t i) const;
  std::filesystem::path root;
};

Dataset read_dataset(const std::filesystem::path& dir);

nlohmann::json camera_to_json(const CameraModel& cam);
CameraModel camera_from_json(const nlohmann::json& j);

}  // namespace atlas
