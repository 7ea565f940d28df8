// Command line front end for the mapping and planning stack.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "atlas/binary_io.hpp"
#include "atlas/mission.hpp"

namespace
{
using namespace atlas;
using nlohmann::json;

constexpr int kExitSuccess = 0;
constexpr int kExitError = 1;
constexpr int kExitMissionFailure = 2;

struct Common
{
  std::string config;
  std::optional<uint64_t> seed;
  std::string task_embedding;
  std::string out;
};

MissionConfig load_config(const Common& c)
{
  MissionConfig cfg = c.config.empty() ? MissionConfig{} : load_mission_config(c.config);
  if (c.seed)
  {
    cfg.seed = *c.seed;
  }
  return cfg;
}

/// One-row ATLF table, or a JSON number array when the name ends in .json.
VecX read_embedding(const std::string& path)
{
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json")
  {
    std::ifstream in(path);
    if (!in)
    {
      throw ConfigError("cannot open " + path);
    }
    const std::vector<double> v = json::parse(in).get<std::vector<double>>();
    return Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  const MatX rows = load_corpus(path);
  if (rows.rows() != 1)
  {
    throw ConfigError(path + ": expected exactly one embedding row");
  }
  return rows.row(0).transpose();
}

void write_ppm(const std::filesystem::path& path, const Raster& color)
{
  std::ofstream out(path, std::ios::binary);
  out << "P6\n" << color.width << ' ' << color.height << "\n255\n";
  for (Eigen::Index i = 0; i < color.data.cols(); ++i)
  {
    for (int c = 0; c < 3; ++c)
    {
      const double v = std::clamp(color.data(c, i), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
}

void write_depth_pgm(const std::filesystem::path& path, const Raster& depth, double max_depth)
{
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << depth.width << ' ' << depth.height << "\n255\n";
  for (Eigen::Index i = 0; i < depth.data.cols(); ++i)
  {
    const double v = std::clamp(depth.data(0, i) / max_depth, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
}

int cmd_run(const Common& c)
{
  MissionConfig cfg = load_config(c);
  if (!c.task_embedding.empty())
  {
    cfg.task_embedding = read_embedding(c.task_embedding);
    cfg.validate();
  }
  const auto t0 = std::chrono::steady_clock::now();
  const MissionOutput out = run_mission(cfg);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!c.out.empty())
  {
    write_mission_output(c.out, out);
  }
  const MissionReport& r = out.report;
  std::cout << "outcome " << r.outcome << " after " << r.ticks << " ticks\n"
            << "PL " << r.path_length << " m, SP " << r.shortest_path << " m, ratio "
            << r.competitive_ratio << '\n'
            << "safety max p " << r.max_audit_probability << (r.safety_ok ? " ok" : " VIOLATED")
            << '\n';
  std::cerr << "wall time " << seconds << " s\n";
  return r.success ? kExitSuccess : kExitMissionFailure;
}

int cmd_replay(const Common& c, const std::string& dataset_dir, int top_k)
{
  const MissionConfig cfg = load_config(c);
  const Dataset ds = read_dataset(dataset_dir);
  std::string task_path = c.task_embedding;
  if (task_path.empty() && std::filesystem::exists(std::filesystem::path(dataset_dir) / "task.atlf"))
  {
    task_path = (std::filesystem::path(dataset_dir) / "task.atlf").string();
  }
  if (task_path.empty() && !cfg.task_embedding)
  {
    throw ConfigError("replay needs --task-embedding");
  }
  const VecX task = task_path.empty() ? *cfg.task_embedding : read_embedding(task_path);
  ThresholdOracle oracle(cfg.termination);
  const ReplayReport report = replay_dataset(ds, cfg, task, oracle, top_k);
  const std::string text = replay_to_json(report).dump(2);
  if (!c.out.empty())
  {
    std::filesystem::create_directories(c.out);
    std::ofstream(std::filesystem::path(c.out) / "replay.json") << text << '\n';
  }
  std::cout << "frames " << report.frames.size() << ", first positive "
            << report.first_positive << '\n';
  return report.first_positive >= 0 ? kExitSuccess : kExitMissionFailure;
}

int cmd_query(const Common& c, const std::string& store_dir, std::string basis_path, int top_k)
{
  if (c.task_embedding.empty())
  {
    throw ConfigError("query needs --task-embedding");
  }
  if (basis_path.empty())
  {
    basis_path = (std::filesystem::path(store_dir).parent_path() / "basis.atlf").string();
  }
  const SubmapStore store = SubmapStore::load(store_dir);
  const PcaBasis basis = load_basis(basis_path);
  const VecX task = read_embedding(c.task_embedding);
  const auto top = top_k_retrieve(store, TaskQuery{task, std::nullopt}, basis, top_k);
  json out = json::array();
  for (const RetrievedNode& n : top)
  {
    out.push_back({{"submap", n.submap_id},
                   {"node", n.preorder_index},
                   {"level", to_string(n.level)},
                   {"centroid", {n.world_centroid.x(), n.world_centroid.y(), n.world_centroid.z()}},
                   {"members", n.member_count},
                   {"score", n.score}});
  }
  std::cout << out.dump(2) << '\n';
  if (!c.out.empty())
  {
    std::filesystem::create_directories(c.out);
    std::ofstream(std::filesystem::path(c.out) / "query.json") << out.dump(2) << '\n';
  }
  return kExitSuccess;
}

int cmd_render(const Common& c, const std::string& store_dir, std::vector<double> pose)
{
  const MissionConfig cfg = load_config(c);
  if (c.out.empty())
  {
    throw ConfigError("render needs --out");
  }
  const Vec2 p = pose.size() >= 2 ? Vec2(pose[0], pose[1]) : cfg.scene.start;
  const double heading = pose.size() >= 3 ? pose[2] : cfg.scene.start_heading;
  const Pose cam_pose = ground_camera_pose(p, heading, cfg.scene.camera_height);
  Raster color;
  Raster depth;
  if (store_dir.empty())
  {
    const Frame f = render_frame(build_scene(cfg.scene), cfg.camera, cam_pose);
    color = f.color;
    depth = f.depth;
  }
  else
  {
    const SubmapStore store = SubmapStore::load(store_dir);
    const GaussianCloud map = store.global_map();
    RenderResult r = render(map, cfg.camera, cam_pose, cfg.splat);
    color = std::move(r.color);
    depth = std::move(r.depth);
  }
  std::filesystem::create_directories(c.out);
  write_ppm(std::filesystem::path(c.out) / "color.ppm", color);
  write_depth_pgm(std::filesystem::path(c.out) / "depth.pgm", depth, cfg.camera.max_depth);
  std::cout << "wrote " << c.out << "/color.ppm and depth.pgm\n";
  return kExitSuccess;
}

int cmd_scene_gen(const Common& c, int frames)
{
  const MissionConfig cfg = load_config(c);
  if (c.out.empty())
  {
    throw ConfigError("scene-gen needs --out");
  }
  const Scene scene = build_scene(cfg.scene);
  const Vec2 from = scene.spec.start;
  const Vec2 to(scene.spec.bounds_max.x() - 1.0, scene.spec.start.y());
  const std::vector<Pose> poses = line_trajectory(scene, from, to, frames);
  std::vector<Frame> rendered;
  rendered.reserve(poses.size());
  for (const Pose& pose : poses)
  {
    rendered.push_back(render_frame(scene, cfg.camera, pose));
  }
  const std::filesystem::path dir(c.out);
  write_dataset(dir, cfg.camera, scene.basis, poses, rendered);
  std::ofstream(dir / "scene.json") << scene_to_json(scene.spec).dump(2) << '\n';
  if (!scene.spec.target_label.empty())
  {
    MatX row = scene.embeddings.at(scene.spec.target_label).transpose();
    save_corpus(dir / "task.atlf", row);
  }
  std::cout << "wrote " << poses.size() << " frames to " << dir.string() << '\n';
  return kExitSuccess;
}

void add_common(CLI::App* sub, Common& c)
{
  sub->add_option("--config", c.config, "JSON mission config");
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--task-embedding", c.task_embedding,
                  "Task embedding: one-row ATLF table or JSON array");
  sub->add_option("--out", c.out, "Output directory");
}
}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Semantic Gaussian-splat mapping and chance-constrained navigation"};
  app.require_subcommand(1);

  Common common;
  auto* run = app.add_subcommand("run", "Run a simulated find-the-object mission");
  add_common(run, common);

  std::string dataset;
  int top_k = 5;
  auto* replay = app.add_subcommand("replay", "Map a recorded dataset and evaluate termination");
  add_common(replay, common);
  replay->add_option("dataset", dataset, "Dataset directory")->required();
  replay->add_option("--top-k", top_k, "Retrieved nodes to report");

  std::string store_dir;
  std::string basis_path;
  auto* query = app.add_subcommand("query", "Top-k task retrieval over a saved map");
  add_common(query, common);
  query->add_option("store", store_dir, "Saved store directory")->required();
  query->add_option("--basis", basis_path, "Basis file (default: next to the store)");
  query->add_option("--top-k", top_k, "Nodes to return");

  std::string render_store;
  std::vector<double> pose;
  auto* render_cmd = app.add_subcommand("render", "Render the scene or a saved map to PPM/PGM");
  add_common(render_cmd, common);
  render_cmd->add_option("--store", render_store, "Saved store directory (default: analytic scene)");
  render_cmd->add_option("--pose", pose, "x y heading")->expected(2, 3);

  int frames = 20;
  auto* scene_gen = app.add_subcommand("scene-gen", "Write a synthetic dataset");
  add_common(scene_gen, common);
  scene_gen->add_option("--frames", frames, "Frame count")->check(CLI::PositiveNumber);

  try
  {
    app.parse(argc, argv);
  }
  catch (const CLI::ParseError& e)
  {
    const int code = app.exit(e);
    return code == 0 ? kExitSuccess : kExitError;
  }

  try
  {
    if (run->parsed())
    {
      return cmd_run(common);
    }
    if (replay->parsed())
    {
      return cmd_replay(common, dataset, top_k);
    }
    if (query->parsed())
    {
      return cmd_query(common, store_dir, basis_path, top_k);
    }
    if (render_cmd->parsed())
    {
      return cmd_render(common, render_store, pose);
    }
    if (scene_gen->parsed())
    {
      return cmd_scene_gen(common, frames);
    }
  }
  catch (const std::exception& e)
  {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
