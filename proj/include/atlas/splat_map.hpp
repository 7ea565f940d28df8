#pragma once

#include <span>
#include <vector>

#include "atlas/types.hpp"

namespace atlas
{
/// Isotropic 3D Gaussian with color, opacity and a compressed language feature.
struct GaussianPoint
{
  Vec3 mu = Vec3::Zero();
  double sigma = 0.01;
  Vec3 color = Vec3::Zero();
  double opacity = 0.9;
  VecX feature;

  bool valid() const
  {
    return mu.allFinite() && sigma > 0.0 && opacity > 0.0 && opacity <= 1.0;
  }
};

using GaussianCloud = std::vector<GaussianPoint>;

struct CameraModel
{
  double fx = 200.0;
  double fy = 200.0;
  double cx = 159.5;
  double cy = 119.5;
  int width = 320;
  int height = 240;
  double max_depth = 5.0;

  void validate() const;
  int pixel_count() const { return width * height; }
};

/// Multi-channel image. Column `v * width + u` holds the channels of pixel
/// (u, v), so a pixel is a contiguous Eigen column.
struct Raster
{
  int width = 0;
  int height = 0;
  MatX data;  // channels x (width * height)

  Raster() = default;
  Raster(int w, int h, int channels) : width(w), height(h), data(MatX::Zero(channels, w * h)) {}

  int channels() const { return static_cast<int>(data.rows()); }
  Eigen::Index index(int u, int v) const { return static_cast<Eigen::Index>(v) * width + u; }
  auto pixel(int u, int v) { return data.col(index(u, v)); }
  auto pixel(int u, int v) const { return data.col(index(u, v)); }
  double& at(int u, int v, int channel = 0) { return data(channel, index(u, v)); }
  double at(int u, int v, int channel = 0) const { return data(channel, index(u, v)); }
};

/// One RGB-D-feature observation. Depth 0 marks an invalid pixel.
struct Frame
{
  Pose pose = Pose::Identity();  // camera-to-world
  Raster color;                   // 3 channels in [0, 1]
  Raster depth;                   // 1 channel, meters
  Raster features;                // N_c channels

  void validate(const CameraModel& cam) const;
};

struct RenderResult
{
  Raster color;
  Raster depth;
  Raster features;
  Raster alpha;
};

struct SplatOptions
{
  double initial_opacity = 0.9;
  double truncation_sigmas = 3.0;
  double near_plane = 1e-3;
  /// Compositing stops at a pixel once transmittance falls below this.
  double min_transmittance = 1e-4;
};

/// Back-project every `stride`-th pixel with valid depth into a Gaussian at
/// the world point, sigma = depth / fx.
GaussianCloud backproject_init(const Frame& frame, const CameraModel& cam, int stride,
                               const SplatOptions& options = {});

/// Front-to-back alpha compositing of color, depth and feature channels.
///
/// Each Gaussian is splatted with mean pi(mu) and isotropic 2D std
/// sigma * f / z, alpha(p) = o * exp(-0.5 |p - mu2d|^2 / sigma2d^2), and
/// evaluated only inside a `truncation_sigmas` pixel radius. Gaussians are
/// sorted by camera depth with ties broken by input index.
RenderResult render(std::span<const GaussianPoint> points, const CameraModel& cam,
                    const Pose& camera_to_world, const SplatOptions& options = {});

/// Merge Gaussians sharing a voxel cell of edge `voxel`; merged attributes are
/// opacity-weighted means and opacity is the maximum of the members. Output
/// order follows the first member of each cell.
GaussianCloud prune_merge(std::span<const GaussianPoint> points, double voxel);

/// Camera-to-world pose of a ground robot's forward-looking camera. Camera
/// axes: x right, y down, z forward; world z is up.
Pose ground_camera_pose(const Vec2& position, double heading, double camera_height);

}  // namespace atlas
