#include <doctest.h>

#include <algorithm>
#include <random>

#include "atlas/splat_map.hpp"
#include "atlas/synthetic_scene.hpp"

using namespace atlas;

namespace
{
CameraModel small_camera()
{
  CameraModel cam;
  cam.width = 80;
  cam.height = 60;
  cam.fx = cam.fy = 50.0;
  cam.cx = 39.5;
  cam.cy = 29.5;
  cam.max_depth = 8.0;
  return cam;
}

GaussianPoint point_at(const Vec3& mu, double sigma, double opacity, const Vec3& color, int n_f = 2)
{
  GaussianPoint g;
  g.mu = mu;
  g.sigma = sigma;
  g.opacity = opacity;
  g.color = color;
  g.feature = VecX::Constant(n_f, color.x());
  return g;
}
}  // namespace

TEST_CASE("ground camera looks along the heading")
{
  for (double heading : {0.0, 0.7, -2.0})
  {
    const Pose pose = ground_camera_pose(Vec2(1.0, 2.0), heading, 0.5);
    CHECK((pose.linear().col(2) - Vec3(std::cos(heading), std::sin(heading), 0)).norm() < 1e-15);
    CHECK((pose.linear().transpose() * pose.linear() - Eigen::Matrix3d::Identity()).norm() < 1e-14);
    CHECK(pose.linear().determinant() == doctest::Approx(1.0));
    CHECK(pose.translation() == Vec3(1.0, 2.0, 0.5));
  }
}

TEST_CASE("single splat composites its own attributes at the centre pixel")
{
  const CameraModel cam = small_camera();
  const Pose pose = Pose::Identity();
  // Centre pixel of the image, optical axis z.
  const double z = 2.0;
  const Vec3 mu((40 - cam.cx) * z / cam.fx, (30 - cam.cy) * z / cam.fy, z);
  const GaussianCloud cloud = {point_at(mu, 0.04, 0.8, Vec3(0.2, 0.4, 0.6))};
  const RenderResult r = render(cloud, cam, pose);
  CHECK(r.alpha.at(40, 30) == doctest::Approx(0.8));
  CHECK(r.depth.at(40, 30) == doctest::Approx(0.8 * z));
  CHECK(r.color.at(40, 30, 1) == doctest::Approx(0.8 * 0.4));
  CHECK(r.features.at(40, 30, 0) == doctest::Approx(0.8 * 0.2));
  // Outside the truncation radius nothing is drawn.
  CHECK(r.alpha.at(0, 0) == 0.0);
  // Off-centre falloff: sigma_2d = 0.04 * 50 / 2 = 1 pixel.
  CHECK(r.alpha.at(41, 30) == doctest::Approx(0.8 * std::exp(-0.5)));
}

TEST_CASE("front splat occludes the back one")
{
  const CameraModel cam = small_camera();
  GaussianCloud cloud = {point_at(Vec3(0, 0, 4.0), 0.2, 0.99, Vec3(0, 0, 1)),
                         point_at(Vec3(0, 0, 1.0), 0.05, 0.99, Vec3(1, 0, 0))};
  const RenderResult r = render(cloud, cam, Pose::Identity());
  const int u = 40;
  const int v = 30;
  // Projection of (0, 0, z) lands at (cx, cy) = (39.5, 29.5).
  CHECK(r.color.at(u, v, 0) > 0.8);
  CHECK(r.color.at(u, v, 2) < 0.1);
  // Input order does not matter.
  std::swap(cloud[0], cloud[1]);
  const RenderResult s = render(cloud, cam, Pose::Identity());
  CHECK((s.color.data - r.color.data).norm() == 0.0);
  CHECK((s.depth.data - r.depth.data).norm() == 0.0);
}

TEST_CASE("points behind the camera are ignored")
{
  const CameraModel cam = small_camera();
  const GaussianCloud cloud = {point_at(Vec3(0, 0, -1.0), 0.1, 0.9, Vec3(1, 1, 1))};
  const RenderResult r = render(cloud, cam, Pose::Identity());
  CHECK(r.alpha.data.maxCoeff() == 0.0);
}

TEST_CASE("rendering back-projected planar frames reproduces colour and depth")
{
  const CameraModel cam = small_camera();
  // Camera-frame planes n . x = c, facing the camera and slanted.
  const std::vector<std::pair<Vec3, double>> planes = {
      {Vec3(0, 0, 1), 3.0}, {Vec3(0.3, 0.0, 1.0).normalized(), 2.5},
      {Vec3(0.0, -0.6, 1.0).normalized(), 2.0}};
  for (const auto& [n, c] : planes)
  {
    Frame frame;
    frame.pose = ground_camera_pose(Vec2(0.5, -1.0), 0.3, 0.5);
    frame.color = Raster(cam.width, cam.height, 3);
    frame.depth = Raster(cam.width, cam.height, 1);
    frame.features = Raster(cam.width, cam.height, 2);
    for (int v = 0; v < cam.height; ++v)
    {
      for (int u = 0; u < cam.width; ++u)
      {
        const Vec3 ray((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
        const double z = c / n.dot(ray);
        const Vec3 x = z * ray;
        frame.depth.at(u, v) = z;
        const Eigen::Index px = frame.color.index(u, v);
        frame.color.data.col(px) =
            Vec3(0.5 + 0.4 * std::sin(3.0 * x.x()), 0.5 + 0.4 * std::cos(2.0 * x.y()), 0.3);
        frame.features.data.col(px) = Vec2(x.x(), x.y());
      }
    }
    const RenderResult r = render(backproject_init(frame, cam, 1), cam, frame.pose);
    size_t opaque = 0;
    double worst_color = 0.0;
    double worst_depth = 0.0;
    for (int v = 0; v < cam.height; ++v)
    {
      for (int u = 0; u < cam.width; ++u)
      {
        const double a = r.alpha.at(u, v);
        if (a <= 0.99)
        {
          continue;
        }
        ++opaque;
        for (int ch = 0; ch < 3; ++ch)
        {
          worst_color = std::max(worst_color, std::abs(r.color.at(u, v, ch) -
                                                       frame.color.at(u, v, ch)));
        }
        const double truth = frame.depth.at(u, v);
        worst_depth = std::max(worst_depth, std::abs(r.depth.at(u, v) / a - truth) / truth);
      }
    }
    INFO("plane " << n.transpose() << " c " << c);
    CHECK(opaque > static_cast<size_t>(cam.pixel_count() / 2));
    CHECK(worst_color < 0.15);
    CHECK(worst_depth < 0.05);
  }
}

TEST_CASE("corridor renders match the frame away from occlusion edges")
{
  const Scene scene = build_scene(corridor_scene());
  const CameraModel cam = small_camera();
  for (const auto& [p, heading] : {std::pair{Vec2(1.0, 0.0), 0.0}, {Vec2(5.0, 0.5), 0.4},
                                   {Vec2(9.0, -0.5), 2.5}})
  {
    const Pose pose = ground_camera_pose(p, heading, scene.spec.camera_height);
    const Frame frame = render_frame(scene, cam, pose);
    const RenderResult r = render(backproject_init(frame, cam, 1), cam, pose);
    // A pixel is interior when its 7x7 neighbourhood has one colour and no
    // depth jump; splats reach three pixels.
    auto interior = [&](int u, int v) {
      const double d0 = frame.depth.at(u, v);
      for (int dv = -3; dv <= 3; ++dv)
      {
        for (int du = -3; du <= 3; ++du)
        {
          const int uu = u + du;
          const int vv = v + dv;
          if (uu < 0 || vv < 0 || uu >= cam.width || vv >= cam.height)
          {
            return false;
          }
          if ((frame.color.pixel(uu, vv) - frame.color.pixel(u, v)).norm() > 1e-9 ||
              std::abs(frame.depth.at(uu, vv) - d0) > 0.1 * d0 || frame.depth.at(uu, vv) <= 0.0)
          {
            return false;
          }
        }
      }
      return true;
    };
    size_t checked = 0;
    double worst = 0.0;
    for (int v = 0; v < cam.height; ++v)
    {
      for (int u = 0; u < cam.width; ++u)
      {
        if (r.alpha.at(u, v) > 0.99 && interior(u, v))
        {
          ++checked;
          worst = std::max(worst, (r.color.pixel(u, v) - frame.color.pixel(u, v))
                                      .cwiseAbs()
                                      .maxCoeff());
        }
      }
    }
    INFO("pose " << p.transpose() << " heading " << heading);
    CHECK(checked > 100);
    CHECK(worst < 0.15);
  }
}

TEST_CASE("back-projection geometry")
{
  const Scene scene = build_scene(corridor_scene());
  const CameraModel cam = small_camera();
  const Pose pose = ground_camera_pose(Vec2(2.0, 0.0), 0.0, 0.5);
  const Frame frame = render_frame(scene, cam, pose);
  const GaussianCloud all = backproject_init(frame, cam, 1);
  const GaussianCloud sparse = backproject_init(frame, cam, 4);
  CHECK(sparse.size() < all.size());
  CHECK(sparse.size() <= static_cast<size_t>(20 * 15));
  for (const GaussianPoint& g : all)
  {
    // Every point lies on a box surface of the scene.
    const Vec3 origin = pose.translation();
    const Vec3 dir = (g.mu - origin).normalized();
    const auto hit = cast_ray(scene.spec, origin, dir, 100.0);
    REQUIRE(hit);
    CHECK(hit->t == doctest::Approx((g.mu - origin).norm()).epsilon(1e-9));
    CHECK(g.feature.size() == scene.spec.compressed_dim);
    CHECK(g.sigma > 0.0);
  }
  CHECK_THROWS(backproject_init(frame, cam, 0));
}

TEST_CASE("prune_merge")
{
  const GaussianCloud cloud = {point_at(Vec3(0.01, 0.01, 0.01), 0.02, 0.5, Vec3(1, 0, 0)),
                               point_at(Vec3(0.5, 0.5, 0.5), 0.02, 0.9, Vec3(0, 1, 0)),
                               point_at(Vec3(0.07, 0.03, 0.05), 0.04, 1.0, Vec3(0, 0, 1))};
  const GaussianCloud merged = prune_merge(cloud, 0.1);
  REQUIRE(merged.size() == 2);
  // First cell first, opacity-weighted attributes, max opacity.
  CHECK(merged[0].opacity == 1.0);
  CHECK((merged[0].mu - (0.5 * cloud[0].mu + 1.0 * cloud[2].mu) / 1.5).norm() < 1e-15);
  CHECK(merged[0].sigma == doctest::Approx((0.5 * 0.02 + 0.04) / 1.5));
  CHECK(merged[0].color.x() == doctest::Approx(1.0 / 3.0));
  CHECK(merged[0].feature(0) == doctest::Approx(1.0 / 3.0));
  CHECK(merged[1].mu == cloud[1].mu);

  // Idempotent once every cell holds one point.
  const GaussianCloud again = prune_merge(merged, 0.1);
  CHECK(again.size() == merged.size());
  CHECK_THROWS(prune_merge(cloud, 0.0));
}

TEST_CASE("prune_merge never increases the count and keeps centroids in their cells")
{
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GaussianCloud cloud;
  for (int i = 0; i < 2000; ++i)
  {
    cloud.push_back(point_at(Vec3(u(rng), u(rng), u(rng)), 0.01, 0.5 + 0.4 * std::abs(u(rng)),
                             Vec3::Constant(0.5)));
  }
  const double voxel = 0.25;
  const GaussianCloud merged = prune_merge(cloud, voxel);
  CHECK(merged.size() <= 8 * 8 * 8);
  CHECK(merged.size() < cloud.size());
  for (const GaussianPoint& g : merged)
  {
    CHECK(g.valid());
  }
}
