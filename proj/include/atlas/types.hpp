#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace atlas
{
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Rigid body transform. Camera and anchor poses are X-to-world.
using Pose = Eigen::Isometry3d;

/// Pose from a row-major 3x4 [R | t] block.
inline Pose pose_from_rows(const double* rows12)
{
  Pose pose = Pose::Identity();
  for (int r = 0; r < 3; ++r)
  {
    for (int c = 0; c < 3; ++c)
    {
      pose.linear()(r, c) = rows12[r * 4 + c];
    }
    pose.translation()(r) = rows12[r * 4 + 3];
  }
  return pose;
}

inline void pose_to_rows(const Pose& pose, double* rows12)
{
  for (int r = 0; r < 3; ++r)
  {
    for (int c = 0; c < 3; ++c)
    {
      rows12[r * 4 + c] = pose.linear()(r, c);
    }
    rows12[r * 4 + 3] = pose.translation()(r);
  }
}

inline Pose translation_pose(const Vec3& t)
{
  Pose pose = Pose::Identity();
  pose.translation() = t;
  return pose;
}

}  // namespace atlas
