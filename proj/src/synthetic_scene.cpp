#include "atlas/synthetic_scene.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <Eigen/QR>

#include "atlas/binary_io.hpp"

namespace atlas
{
namespace
{
using nlohmann::json;

json vec_json(const Eigen::Ref<const VecX>& v)
{
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
  {
    out.push_back(v(i));
  }
  return out;
}

template <int N>
Eigen::Matrix<double, N, 1> vec_from(const json& j, const char* what)
{
  if (!j.is_array() || j.size() != N)
  {
    throw SceneError(std::string("expected ") + std::to_string(N) + " numbers for " + what);
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i)
  {
    v(i) = j.at(static_cast<size_t>(i)).get<double>();
  }
  return v;
}

std::string frame_name(uint64_t id)
{
  std::ostringstream name;
  name << "frame_" << std::setw(6) << std::setfill('0') << id << ".atlf";
  return name.str();
}
}  // namespace

void SceneSpec::validate() const
{
  if (boxes.empty())
  {
    throw SceneError("scene has no boxes");
  }
  auto has_label = [&](const std::string& name) {
    return std::any_of(labels.begin(), labels.end(),
                       [&](const SceneLabel& l) { return l.name == name; });
  };
  for (const SceneBox& b : boxes)
  {
    if (!(b.min.array() < b.max.array()).all() || !b.min.allFinite() || !b.max.allFinite())
    {
      throw SceneError("box with empty or non-finite extent");
    }
    if (!has_label(b.label))
    {
      throw SceneError("box uses unknown label '" + b.label + "'");
    }
  }
  for (const SceneLabel& l : labels)
  {
    if (l.related_to && (!has_label(*l.related_to) || std::abs(l.similarity) >= 1.0))
    {
      throw SceneError("bad relation for label '" + l.name + "'");
    }
  }
  if (!target_label.empty() && !has_label(target_label))
  {
    throw SceneError("unknown target label '" + target_label + "'");
  }
  if (static_cast<int>(labels.size()) > feature_dim || compressed_dim < 1 ||
      compressed_dim > feature_dim || basis_samples < 1 || !(basis_noise >= 0.0))
  {
    throw SceneError("bad feature dimensions");
  }
  if (!(bounds_min.array() < bounds_max.array()).all())
  {
    throw SceneError("empty scene bounds");
  }
}

SceneSpec corridor_scene()
{
  SceneSpec s;
  s.labels = {{"floor", std::nullopt, 0.0},
              {"wall", std::nullopt, 0.0},
              {"crate", std::nullopt, 0.0},
              {"shelf", std::string("backpack"), 0.5},
              {"backpack", std::nullopt, 0.0}};
  const Vec3 grey(0.55, 0.55, 0.55);
  s.boxes = {
      {{0.0, -1.5, -0.1}, {14.0, 1.5, 0.0}, "floor", Vec3(0.35, 0.3, 0.25), false},
      {{0.0, 1.5, 0.0}, {14.0, 1.7, 2.5}, "wall", grey, true},
      {{0.0, -1.7, 0.0}, {14.0, -1.5, 2.5}, "wall", grey, true},
      {{-0.2, -1.7, 0.0}, {0.0, 1.7, 2.5}, "wall", grey, true},
      {{14.0, -1.7, 0.0}, {14.2, 1.7, 2.5}, "wall", grey, true},
      {{6.5, -1.5, 0.0}, {7.1, -0.5, 0.6}, "crate", Vec3(0.6, 0.45, 0.2), true},
      {{3.8, 0.9, 0.0}, {4.3, 1.5, 0.8}, "shelf", Vec3(0.2, 0.3, 0.6), true},
      {{10.3, 0.7, 0.0}, {10.7, 1.1, 0.4}, "backpack", Vec3(0.8, 0.1, 0.1), true},
  };
  s.target_label = "backpack";
  s.start = Vec2(1.0, 0.0);
  s.start_heading = 0.0;
  s.bounds_min = Vec2(0.2, -1.3);
  s.bounds_max = Vec2(13.8, 1.3);
  return s;
}

SceneSpec scene_from_json(const json& j)
{
  try
  {
    SceneSpec s;
    for (const json& b : j.at("boxes"))
    {
      SceneBox box;
      box.min = vec_from<3>(b.at("min"), "box min");
      box.max = vec_from<3>(b.at("max"), "box max");
      box.label = b.at("label").get<std::string>();
      if (b.contains("color"))
      {
        box.color = vec_from<3>(b.at("color"), "box color");
      }
      box.obstacle = b.value("obstacle", true);
      s.boxes.push_back(box);
    }
    for (const json& l : j.at("labels"))
    {
      SceneLabel label;
      label.name = l.at("name").get<std::string>();
      if (l.contains("related_to"))
      {
        label.related_to = l.at("related_to").get<std::string>();
        label.similarity = l.at("similarity").get<double>();
      }
      s.labels.push_back(label);
    }
    s.target_label = j.value("target_label", std::string());
    if (j.contains("start"))
    {
      s.start = vec_from<2>(j.at("start"), "start");
    }
    s.start_heading = j.value("start_heading", s.start_heading);
    s.camera_height = j.value("camera_height", s.camera_height);
    if (j.contains("bounds_min"))
    {
      s.bounds_min = vec_from<2>(j.at("bounds_min"), "bounds_min");
    }
    if (j.contains("bounds_max"))
    {
      s.bounds_max = vec_from<2>(j.at("bounds_max"), "bounds_max");
    }
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    s.compressed_dim = j.value("compressed_dim", s.compressed_dim);
    s.basis_samples = j.value("basis_samples", s.basis_samples);
    s.basis_noise = j.value("basis_noise", s.basis_noise);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
  }
  catch (const json::exception& e)
  {
    throw SceneError(std::string("malformed scene spec: ") + e.what());
  }
}

json scene_to_json(const SceneSpec& s)
{
  json boxes = json::array();
  for (const SceneBox& b : s.boxes)
  {
    boxes.push_back({{"min", vec_json(b.min)},
                     {"max", vec_json(b.max)},
                     {"label", b.label},
                     {"color", vec_json(b.color)},
                     {"obstacle", b.obstacle}});
  }
  json labels = json::array();
  for (const SceneLabel& l : s.labels)
  {
    json entry = {{"name", l.name}};
    if (l.related_to)
    {
      entry["related_to"] = *l.related_to;
      entry["similarity"] = l.similarity;
    }
    labels.push_back(entry);
  }
  return {{"boxes", boxes},
          {"labels", labels},
          {"target_label", s.target_label},
          {"start", vec_json(s.start)},
          {"start_heading", s.start_heading},
          {"camera_height", s.camera_height},
          {"bounds_min", vec_json(s.bounds_min)},
          {"bounds_max", vec_json(s.bounds_max)},
          {"feature_dim", s.feature_dim},
          {"compressed_dim", s.compressed_dim},
          {"basis_samples", s.basis_samples},
          {"basis_noise", s.basis_noise},
          {"seed", s.seed}};
}

const SceneBox* Scene::target_box() const
{
  for (const SceneBox& b : spec.boxes)
  {
    if (b.label == spec.target_label)
    {
      return &b;
    }
  }
  return nullptr;
}

Vec3 Scene::target_center() const
{
  const SceneBox* b = target_box();
  if (b == nullptr)
  {
    throw SceneError("scene has no target object");
  }
  return 0.5 * (b->min + b->max);
}

std::map<std::string, VecX> label_embeddings(const SceneSpec& spec)
{
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(spec.labels.size());
  MatX random(spec.feature_dim, n);
  for (Eigen::Index c = 0; c < n; ++c)
  {
    for (Eigen::Index r = 0; r < spec.feature_dim; ++r)
    {
      random(r, c) = normal(rng);
    }
  }
  const MatX frame = Eigen::HouseholderQR<MatX>(random).householderQ() *
                     MatX::Identity(spec.feature_dim, n);

  std::map<std::string, VecX> base;
  for (Eigen::Index i = 0; i < n; ++i)
  {
    base[spec.labels[static_cast<size_t>(i)].name] = frame.col(i);
  }
  std::map<std::string, VecX> out;
  for (const SceneLabel& l : spec.labels)
  {
    VecX e = base.at(l.name);
    if (l.related_to)
    {
      e = l.similarity * base.at(*l.related_to) +
          std::sqrt(1.0 - l.similarity * l.similarity) * e;
    }
    out[l.name] = e;
  }
  return out;
}

PcaBasis fit_scene_basis(const SceneSpec& spec, const std::map<std::string, VecX>& embeddings)
{
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = spec.basis_noise / std::sqrt(static_cast<double>(spec.feature_dim));
  const auto rows = static_cast<Eigen::Index>(embeddings.size()) * spec.basis_samples;
  MatX corpus(rows, spec.feature_dim);
  Eigen::Index r = 0;
  for (const auto& [name, e] : embeddings)
  {
    for (int k = 0; k < spec.basis_samples; ++k, ++r)
    {
      for (Eigen::Index c = 0; c < spec.feature_dim; ++c)
      {
        corpus(r, c) = e(c) + scale * normal(rng);
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<size_t>(rows));
  for (Eigen::Index i = 0; i < rows; ++i)
  {
    order[static_cast<size_t>(i)] = i;
  }
  std::shuffle(order.begin(), order.end(), rng);
  MatX shuffled(rows, spec.feature_dim);
  for (Eigen::Index i = 0; i < rows; ++i)
  {
    shuffled.row(i) = corpus.row(order[static_cast<size_t>(i)]);
  }
  const int batch = std::max(128, spec.compressed_dim);
  return fit_corpus(make_basis(spec.feature_dim, spec.compressed_dim), shuffled, batch);
}

Scene build_scene(const SceneSpec& spec)
{
  spec.validate();
  Scene scene;
  scene.spec = spec;
  scene.embeddings = label_embeddings(spec);
  scene.basis = fit_scene_basis(spec, scene.embeddings);
  for (const auto& [name, e] : scene.embeddings)
  {
    scene.codes[name] = encode(scene.basis, e);
  }
  return scene;
}

std::optional<RayHit> cast_ray(const SceneSpec& spec, const Vec3& origin, const Vec3& dir,
                               double t_max)
{
  std::optional<RayHit> best;
  for (size_t i = 0; i < spec.boxes.size(); ++i)
  {
    const SceneBox& b = spec.boxes[i];
    double t0 = 0.0;
    double t1 = t_max;
    bool miss = false;
    for (int k = 0; k < 3 && !miss; ++k)
    {
      if (dir(k) == 0.0)
      {
        miss = origin(k) < b.min(k) || origin(k) > b.max(k);
        continue;
      }
      double ta = (b.min(k) - origin(k)) / dir(k);
      double tb = (b.max(k) - origin(k)) / dir(k);
      if (ta > tb)
      {
        std::swap(ta, tb);
      }
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      miss = t0 > t1;
    }
    if (miss || !(t0 > 0.0))
    {
      continue;
    }
    if (!best || t0 < best->t)
    {
      best = RayHit{t0, i};
    }
  }
  return best;
}

Frame render_frame(const Scene& scene, const CameraModel& cam, const Pose& camera_to_world)
{
  cam.validate();
  Frame frame;
  frame.pose = camera_to_world;
  frame.color = Raster(cam.width, cam.height, 3);
  frame.depth = Raster(cam.width, cam.height, 1);
  frame.features = Raster(cam.width, cam.height, scene.basis.compressed_dim());
  const Vec3 origin = camera_to_world.translation();
  const Eigen::Matrix3d rot = camera_to_world.linear();
  for (int v = 0; v < cam.height; ++v)
  {
    for (int u = 0; u < cam.width; ++u)
    {
      // Unnormalized ray with unit camera z, so t equals depth.
      const Vec3 ray_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      const auto hit = cast_ray(scene.spec, origin, rot * ray_cam, cam.max_depth);
      if (!hit)
      {
        continue;
      }
      const SceneBox& box = scene.spec.boxes[hit->box];
      frame.depth.at(u, v) = hit->t;
      frame.color.pixel(u, v) = box.color;
      frame.features.pixel(u, v) = scene.codes.at(box.label);
    }
  }
  return frame;
}

std::vector<Pose> line_trajectory(const Scene& scene, const Vec2& from, const Vec2& to, int count)
{
  if (count < 1)
  {
    throw SceneError("trajectory needs at least one frame");
  }
  const Vec2 d = to - from;
  const double heading = d.norm() > 0.0 ? std::atan2(d.y(), d.x()) : scene.spec.start_heading;
  std::vector<Pose> poses;
  for (int i = 0; i < count; ++i)
  {
    const double s = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    poses.push_back(ground_camera_pose(from + s * d, heading, scene.spec.camera_height));
  }
  return poses;
}

json camera_to_json(const CameraModel& cam)
{
  return {{"fx", cam.fx},       {"fy", cam.fy},         {"cx", cam.cx},
          {"cy", cam.cy},       {"width", cam.width},   {"height", cam.height},
          {"max_depth", cam.max_depth}};
}

CameraModel camera_from_json(const json& j)
{
  CameraModel cam;
  cam.fx = j.value("fx", cam.fx);
  cam.fy = j.value("fy", cam.fy);
  cam.cx = j.value("cx", cam.cx);
  cam.cy = j.value("cy", cam.cy);
  cam.width = j.value("width", cam.width);
  cam.height = j.value("height", cam.height);
  cam.max_depth = j.value("max_depth", cam.max_depth);
  cam.validate();
  return cam;
}

void write_dataset(const std::filesystem::path& dir, const CameraModel& cam,
                   const PcaBasis& basis, const std::vector<Pose>& poses,
                   const std::vector<Frame>& frames)
{
  if (poses.size() != frames.size())
  {
    throw SceneError("pose and frame counts differ");
  }
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "camera.json");
    out << camera_to_json(cam).dump(2) << '\n';
  }
  save_basis(dir / "basis.atlf", basis);
  std::ofstream index(dir / "poses.txt");
  index << std::setprecision(17);
  for (size_t i = 0; i < frames.size(); ++i)
  {
    double rows[12];
    pose_to_rows(poses[i], rows);
    index << i;
    for (double r : rows)
    {
      index << ' ' << r;
    }
    index << '\n';

    const Frame& f = frames[i];
    f.validate(cam);
    MatX table(cam.pixel_count(), 4 + f.features.channels());
    table.leftCols(3) = f.color.data.transpose();
    table.col(3) = f.depth.data.row(0).transpose();
    table.rightCols(f.features.channels()) = f.features.data.transpose();
    save_table(dir / frame_name(i), FloatTable::from_matrix(table));
  }
  if (!index)
  {
    throw SceneError("failed writing " + (dir / "poses.txt").string());
  }
}

Dataset read_dataset(const std::filesystem::path& dir)
{
  Dataset ds;
  ds.root = dir;
  std::ifstream cam_in(dir / "camera.json");
  if (!cam_in)
  {
    throw SceneError("missing camera.json in " + dir.string());
  }
  try
  {
    ds.camera = camera_from_json(json::parse(cam_in));
  }
  catch (const json::exception& e)
  {
    throw SceneError(std::string("bad camera.json: ") + e.what());
  }
  ds.basis = load_basis(dir / "basis.atlf");

  std::ifstream index(dir / "poses.txt");
  if (!index)
  {
    throw SceneError("missing poses.txt in " + dir.string());
  }
  std::string line;
  size_t line_no = 0;
  while (std::getline(index, line))
  {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos)
    {
      continue;
    }
    std::istringstream fields(line);
    uint64_t id = 0;
    double rows[12];
    fields >> id;
    for (double& r : rows)
    {
      fields >> r;
    }
    std::string extra;
    if (!fields || (fields >> extra))
    {
      throw SceneError("poses.txt line " + std::to_string(line_no) + ": expected id and 12 numbers");
    }
    ds.ids.push_back(id);
    ds.poses.push_back(pose_from_rows(rows));
  }
  return ds;
}

Frame Dataset::frame(size_t i) const
{
  const FloatTable table = load_table(root / frame_name(ids.at(i)));
  const int n_c = basis.compressed_dim();
  if (table.count != static_cast<uint32_t>(camera.pixel_count()) ||
      table.dim != static_cast<uint32_t>(4 + n_c))
  {
    throw FormatError("frame table shape does not match camera and basis");
  }
  const MatX m = table.to_matrix();
  Frame f;
  f.pose = poses.at(i);
  f.color = Raster(camera.width, camera.height, 3);
  f.depth = Raster(camera.width, camera.height, 1);
  f.features = Raster(camera.width, camera.height, n_c);
  f.color.data = m.leftCols(3).transpose();
  f.depth.data = m.col(3).transpose();
  f.features.data = m.rightCols(n_c).transpose();
  return f;
}

}  // namespace atlas
