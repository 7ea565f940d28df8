#include "atlas/splat_map.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace atlas
{
void CameraModel::validate() const
{
  if (!(fx > 0.0) || !(fy > 0.0))
  {
    throw std::invalid_argument("focal lengths must be positive");
  }
  if (width <= 0 || height <= 0)
  {
    throw std::invalid_argument("image size must be positive");
  }
  if (!(max_depth > 0.0))
  {
    throw std::invalid_argument("max_depth must be positive");
  }
}

void Frame::validate(const CameraModel& cam) const
{
  auto check = [&](const Raster& r, const char* name) {
    if (r.width != cam.width || r.height != cam.height)
    {
      throw std::invalid_argument(std::string(name) + " image size does not match camera");
    }
  };
  check(color, "color");
  check(depth, "depth");
  check(features, "feature");
  if (color.channels() != 3 || depth.channels() != 1)
  {
    throw std::invalid_argument("color needs 3 channels and depth 1");
  }
}

GaussianCloud backproject_init(const Frame& frame, const CameraModel& cam, int stride,
                               const SplatOptions& options)
{
  cam.validate();
  frame.validate(cam);
  if (stride <= 0)
  {
    throw std::invalid_argument("stride must be positive");
  }
  GaussianCloud out;
  out.reserve(static_cast<size_t>((cam.width / stride + 1) * (cam.height / stride + 1)));
  for (int v = 0; v < cam.height; v += stride)
  {
    for (int u = 0; u < cam.width; u += stride)
    {
      const double d = frame.depth.at(u, v);
      if (!(d > 0.0) || d > cam.max_depth)
      {
        continue;
      }
      const Vec3 in_camera((u - cam.cx) * d / cam.fx, (v - cam.cy) * d / cam.fy, d);
      GaussianPoint g;
      g.mu = frame.pose * in_camera;
      g.sigma = d / cam.fx;
      g.color = frame.color.pixel(u, v);
      g.opacity = options.initial_opacity;
      g.feature = frame.features.pixel(u, v);
      out.push_back(std::move(g));
    }
  }
  return out;
}

RenderResult render(std::span<const GaussianPoint> points, const CameraModel& cam,
                    const Pose& camera_to_world, const SplatOptions& options)
{
  cam.validate();
  const int n_features = points.empty() ? 0 : static_cast<int>(points.front().feature.size());

  RenderResult out{Raster(cam.width, cam.height, 3), Raster(cam.width, cam.height, 1),
                   Raster(cam.width, cam.height, n_features),
                   Raster(cam.width, cam.height, 1)};
  if (points.empty())
  {
    return out;
  }

  const Pose world_to_camera = camera_to_world.inverse();

  struct Splat
  {
    double z;
    size_t index;
    Vec3 in_camera;
  };
  std::vector<Splat> splats;
  splats.reserve(points.size());
  for (size_t i = 0; i < points.size(); ++i)
  {
    if (points[i].feature.size() != n_features)
    {
      throw std::invalid_argument("Gaussians carry features of different lengths");
    }
    const Vec3 pc = world_to_camera * points[i].mu;
    if (pc.z() > options.near_plane)
    {
      splats.push_back({pc.z(), i, pc});
    }
  }
  std::sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) {
    return std::tie(a.z, a.index) < std::tie(b.z, b.index);
  });

  std::vector<double> transmittance(static_cast<size_t>(cam.pixel_count()), 1.0);

  for (const Splat& s : splats)
  {
    const GaussianPoint& g = points[s.index];
    const double mu_u = cam.fx * s.in_camera.x() / s.z + cam.cx;
    const double mu_v = cam.fy * s.in_camera.y() / s.z + cam.cy;
    const double sigma_u = g.sigma * cam.fx / s.z;
    const double sigma_v = g.sigma * cam.fy / s.z;
    const double reach_u = options.truncation_sigmas * sigma_u;
    const double reach_v = options.truncation_sigmas * sigma_v;

    const int u_lo = std::max(0, static_cast<int>(std::ceil(mu_u - reach_u)));
    const int u_hi = std::min(cam.width - 1, static_cast<int>(std::floor(mu_u + reach_u)));
    const int v_lo = std::max(0, static_cast<int>(std::ceil(mu_v - reach_v)));
    const int v_hi = std::min(cam.height - 1, static_cast<int>(std::floor(mu_v + reach_v)));

    for (int v = v_lo; v <= v_hi; ++v)
    {
      const double dv = (v - mu_v) / sigma_v;
      for (int u = u_lo; u <= u_hi; ++u)
      {
        const Eigen::Index px = out.alpha.index(u, v);
        double& t = transmittance[static_cast<size_t>(px)];
        if (t < options.min_transmittance)
        {
          continue;
        }
        const double du = (u - mu_u) / sigma_u;
        const double alpha = g.opacity * std::exp(-0.5 * (du * du + dv * dv));
        const double weight = alpha * t;
        out.color.data.col(px) += weight * g.color;
        out.depth.data(0, px) += weight * s.z;
        if (n_features > 0)
        {
          out.features.data.col(px) += weight * g.feature;
        }
        t *= 1.0 - alpha;
      }
    }
  }

  for (Eigen::Index px = 0; px < out.alpha.data.cols(); ++px)
  {
    out.alpha.data(0, px) = 1.0 - transmittance[static_cast<size_t>(px)];
  }
  return out;
}

GaussianCloud prune_merge(std::span<const GaussianPoint> points, double voxel)
{
  if (!(voxel > 0.0))
  {
    throw std::invalid_argument("voxel size must be positive");
  }
  using Cell = std::tuple<int64_t, int64_t, int64_t>;
  std::map<Cell, size_t> slot_of_cell;
  std::vector<std::vector<size_t>> members;
  for (size_t i = 0; i < points.size(); ++i)
  {
    const Vec3& p = points[i].mu;
    const Cell cell{static_cast<int64_t>(std::floor(p.x() / voxel)),
                    static_cast<int64_t>(std::floor(p.y() / voxel)),
                    static_cast<int64_t>(std::floor(p.z() / voxel))};
    auto [it, inserted] = slot_of_cell.try_emplace(cell, members.size());
    if (inserted)
    {
      members.emplace_back();
    }
    members[it->second].push_back(i);
  }

  GaussianCloud out;
  out.reserve(members.size());
  for (const auto& group : members)
  {
    if (group.size() == 1)
    {
      out.push_back(points[group.front()]);
      continue;
    }
    GaussianPoint merged = points[group.front()];
    double weight_sum = 0.0;
    merged.mu.setZero();
    merged.color.setZero();
    merged.sigma = 0.0;
    merged.feature.setZero();
    merged.opacity = 0.0;
    for (size_t i : group)
    {
      const GaussianPoint& g = points[i];
      weight_sum += g.opacity;
      merged.mu += g.opacity * g.mu;
      merged.color += g.opacity * g.color;
      merged.sigma += g.opacity * g.sigma;
      merged.feature += g.opacity * g.feature;
      merged.opacity = std::max(merged.opacity, g.opacity);
    }
    merged.mu /= weight_sum;
    merged.color /= weight_sum;
    merged.sigma /= weight_sum;
    merged.feature /= weight_sum;
    out.push_back(std::move(merged));
  }
  return out;
}

Pose ground_camera_pose(const Vec2& position, double heading, double camera_height)
{
  const double c = std::cos(heading);
  const double s = std::sin(heading);
  Pose pose = Pose::Identity();
  pose.linear().col(0) = Vec3(s, -c, 0.0);
  pose.linear().col(1) = Vec3(0.0, 0.0, -1.0);
  pose.linear().col(2) = Vec3(c, s, 0.0);
  pose.translation() = Vec3(position.x(), position.y(), camera_height);
  return pose;
}

}  // namespace atlas
