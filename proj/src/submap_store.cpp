#include "atlas/submap_store.hpp"

#include <fstream>
#include <limits>

#include <json.hpp>

#include "atlas/binary_io.hpp"

namespace atlas
{
namespace
{
constexpr uint32_t kSubmapVersion = 1;

void write_node(std::ostream& out, const ClusterNode& node)
{
  io::write_pod<uint8_t>(out, static_cast<uint8_t>(node.level));
  io::write_pod<uint32_t>(out, static_cast<uint32_t>(node.children.size()));
  for (int i = 0; i < 3; ++i)
  {
    io::write_pod<double>(out, node.centroid(i));
  }
  io::write_pod<double>(out, node.utility);
  io::write_pod<uint32_t>(out, static_cast<uint32_t>(node.mean_feature.size()));
  for (Eigen::Index i = 0; i < node.mean_feature.size(); ++i)
  {
    io::write_pod<double>(out, node.mean_feature(i));
  }
  io::write_pod<uint64_t>(out, node.members.size());
  for (uint64_t m : node.members)
  {
    io::write_pod<uint64_t>(out, m);
  }
  for (const ClusterNode& child : node.children)
  {
    write_node(out, child);
  }
}

uint64_t count_nodes(const ClusterNode& node)
{
  uint64_t n = 1;
  for (const ClusterNode& child : node.children)
  {
    n += count_nodes(child);
  }
  return n;
}

ClusterNode read_node(std::istream& in, uint64_t& remaining)
{
  if (remaining == 0)
  {
    throw FormatError("hierarchy node list is shorter than its tree");
  }
  --remaining;
  ClusterNode node;
  const auto level = io::read_pod<uint8_t>(in);
  if (level > static_cast<uint8_t>(ClusterLevel::Submap))
  {
    throw FormatError("invalid cluster level");
  }
  node.level = static_cast<ClusterLevel>(level);
  const auto n_children = io::read_pod<uint32_t>(in);
  for (int i = 0; i < 3; ++i)
  {
    node.centroid(i) = io::read_pod<double>(in);
  }
  node.utility = io::read_pod<double>(in);
  node.mean_feature.resize(io::read_pod<uint32_t>(in));
  for (Eigen::Index i = 0; i < node.mean_feature.size(); ++i)
  {
    node.mean_feature(i) = io::read_pod<double>(in);
  }
  const auto n_members = io::read_pod<uint64_t>(in);
  node.members.reserve(std::min<uint64_t>(n_members, 1u << 20));
  for (uint64_t i = 0; i < n_members; ++i)
  {
    node.members.push_back(io::read_pod<uint64_t>(in));
  }
  for (uint32_t c = 0; c < n_children; ++c)
  {
    node.children.push_back(read_node(in, remaining));
  }
  return node;
}

GaussianCloud to_world(const Pose& anchor, const GaussianCloud& local)
{
  GaussianCloud out = local;
  for (GaussianPoint& g : out)
  {
    g.mu = anchor * g.mu;
  }
  return out;
}
}  // namespace

void write_submap(std::ostream& out, const Submap& submap)
{
  io::write_magic(out, "ATLS");
  io::write_pod<uint32_t>(out, kSubmapVersion);
  io::write_pod<uint64_t>(out, submap.id);
  double rows[12];
  pose_to_rows(submap.anchor, rows);
  for (double r : rows)
  {
    io::write_pod<double>(out, r);
  }
  io::write_pod<uint64_t>(out, submap.points.size());
  const uint32_t n_c =
      submap.points.empty() ? 0 : static_cast<uint32_t>(submap.points.front().feature.size());
  io::write_pod<uint32_t>(out, n_c);

  std::vector<float> record(8 + n_c);
  for (const GaussianPoint& g : submap.points)
  {
    if (g.feature.size() != n_c)
    {
      throw std::invalid_argument("submap points carry features of different lengths");
    }
    for (int i = 0; i < 3; ++i)
    {
      record[i] = static_cast<float>(g.mu(i));
      record[4 + i] = static_cast<float>(g.color(i));
    }
    record[3] = static_cast<float>(g.sigma);
    record[7] = static_cast<float>(g.opacity);
    for (uint32_t i = 0; i < n_c; ++i)
    {
      record[8 + i] = static_cast<float>(g.feature(i));
    }
    out.write(reinterpret_cast<const char*>(record.data()),
              static_cast<std::streamsize>(record.size() * sizeof(float)));
  }

  if (submap.hierarchy)
  {
    io::write_pod<uint64_t>(out, count_nodes(*submap.hierarchy));
    write_node(out, *submap.hierarchy);
  }
  else
  {
    io::write_pod<uint64_t>(out, 0);
  }
}

Submap read_submap(std::istream& in)
{
  io::expect_magic(in, "ATLS");
  const auto version = io::read_pod<uint32_t>(in);
  if (version != kSubmapVersion)
  {
    throw FormatError("unsupported ATLS version " + std::to_string(version));
  }
  Submap s;
  s.id = io::read_pod<uint64_t>(in);
  double rows[12];
  for (double& r : rows)
  {
    r = io::read_pod<double>(in);
  }
  s.anchor = pose_from_rows(rows);
  const auto n_points = io::read_pod<uint64_t>(in);
  const auto n_c = io::read_pod<uint32_t>(in);

  std::vector<float> record(8 + n_c);
  s.points.reserve(static_cast<size_t>(std::min<uint64_t>(n_points, 1u << 24)));
  for (uint64_t p = 0; p < n_points; ++p)
  {
    in.read(reinterpret_cast<char*>(record.data()),
            static_cast<std::streamsize>(record.size() * sizeof(float)));
    if (!in)
    {
      throw FormatError("truncated submap point records");
    }
    GaussianPoint g;
    g.mu = Vec3(record[0], record[1], record[2]);
    g.sigma = record[3];
    g.color = Vec3(record[4], record[5], record[6]);
    g.opacity = record[7];
    g.feature.resize(n_c);
    for (uint32_t i = 0; i < n_c; ++i)
    {
      g.feature(i) = record[8 + i];
    }
    s.points.push_back(std::move(g));
  }
  s.point_count = s.points.size();

  uint64_t n_nodes = io::read_pod<uint64_t>(in);
  if (n_nodes > 0)
  {
    s.hierarchy = read_node(in, n_nodes);
    if (n_nodes != 0)
    {
      throw FormatError("hierarchy node count does not match tree");
    }
  }
  return s;
}

void save_submap(const std::filesystem::path& path, const Submap& submap)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
  {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  write_submap(out, submap);
}

Submap load_submap(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
  {
    throw std::runtime_error("cannot open " + path.string());
  }
  return read_submap(in);
}

SubmapStore::SubmapStore(double r_submap, double r_load,
                         std::optional<std::filesystem::path> spill_dir)
    : r_submap_(r_submap), r_load_(r_load), spill_dir_(std::move(spill_dir))
{
  if (!(r_submap > 0.0) || !(r_load > 0.0))
  {
    throw std::invalid_argument("submap and load radii must be positive");
  }
  if (spill_dir_)
  {
    std::filesystem::create_directories(*spill_dir_);
  }
}

uint64_t SubmapStore::ensure_submap(const Pose& robot_pose)
{
  const Vec3 position = robot_pose.translation();
  std::optional<uint64_t> best;
  double best_distance = std::numeric_limits<double>::infinity();
  for (const auto& [id, s] : submaps_)
  {
    const double d = (s.anchor_position() - position).norm();
    if (d <= r_submap_ && d < best_distance)
    {
      best = id;
      best_distance = d;
    }
  }
  if (best)
  {
    return *best;
  }
  Submap s;
  s.id = next_id_++;
  s.anchor = robot_pose;
  s.loaded = true;
  const uint64_t id = s.id;
  submaps_.emplace(id, std::move(s));
  return id;
}

Submap& SubmapStore::mutable_submap(uint64_t id)
{
  auto it = submaps_.find(id);
  if (it == submaps_.end())
  {
    throw SubmapError("unknown submap id " + std::to_string(id));
  }
  return it->second;
}

const Submap& SubmapStore::submap(uint64_t id) const
{
  auto it = submaps_.find(id);
  if (it == submaps_.end())
  {
    throw SubmapError("unknown submap id " + std::to_string(id));
  }
  return it->second;
}

void SubmapStore::insert_points(uint64_t id, std::span<const GaussianPoint> world_points)
{
  Submap& s = mutable_submap(id);
  if (!s.loaded)
  {
    throw SubmapError("cannot insert into unloaded submap " + std::to_string(id));
  }
  const Pose world_to_anchor = s.anchor.inverse();
  s.points.reserve(s.points.size() + world_points.size());
  for (const GaussianPoint& g : world_points)
  {
    GaussianPoint local = g;
    local.mu = world_to_anchor * g.mu;
    s.points.push_back(std::move(local));
  }
  s.point_count = s.points.size();
  ++s.revision;
}

void SubmapStore::replace_points(uint64_t id, GaussianCloud local_points)
{
  Submap& s = mutable_submap(id);
  if (!s.loaded)
  {
    throw SubmapError("cannot modify unloaded submap " + std::to_string(id));
  }
  s.points = std::move(local_points);
  s.point_count = s.points.size();
  ++s.revision;
}

std::filesystem::path SubmapStore::spill_path(uint64_t id) const
{
  return *spill_dir_ / ("submap_" + std::to_string(id) + ".atls");
}

void SubmapStore::spill(Submap& s)
{
  if (!spill_dir_)
  {
    return;
  }
  save_submap(spill_path(s.id), s);
  GaussianCloud().swap(s.points);
}

void SubmapStore::restore(Submap& s)
{
  if (!spill_dir_)
  {
    return;
  }
  s.points = load_submap(spill_path(s.id)).points;
}

GaussianCloud SubmapStore::stored_points(const Submap& s) const
{
  if (s.loaded || !spill_dir_)
  {
    return s.points;
  }
  return load_submap(spill_path(s.id)).points;
}

LoadDelta SubmapStore::refresh_loaded(const Vec3& robot_position)
{
  LoadDelta delta;
  for (auto& [id, s] : submaps_)
  {
    const bool should_load = (s.anchor_position() - robot_position).norm() <= r_load_;
    if (should_load && !s.loaded)
    {
      restore(s);
      s.loaded = true;
      delta.loaded.push_back(id);
    }
    else if (!should_load && s.loaded)
    {
      spill(s);
      s.loaded = false;
      delta.unloaded.push_back(id);
    }
  }
  return delta;
}

void SubmapStore::apply_anchor_corrections(const std::map<uint64_t, Pose>& corrections)
{
  for (const auto& [id, pose] : corrections)
  {
    if (!contains(id))
    {
      throw SubmapError("correction for unknown submap id " + std::to_string(id));
    }
  }
  for (const auto& [id, pose] : corrections)
  {
    mutable_submap(id).anchor = pose;
  }
}

GaussianCloud SubmapStore::local_map() const
{
  GaussianCloud out;
  out.reserve(resident_count());
  for (const auto& [id, s] : submaps_)
  {
    if (!s.loaded)
    {
      continue;
    }
    for (const GaussianPoint& g : s.points)
    {
      GaussianPoint w = g;
      w.mu = s.anchor * g.mu;
      out.push_back(std::move(w));
    }
  }
  return out;
}

GaussianCloud SubmapStore::world_points(uint64_t id) const
{
  const Submap& s = submap(id);
  return to_world(s.anchor, stored_points(s));
}

GaussianCloud SubmapStore::global_map() const
{
  GaussianCloud out;
  out.reserve(global_count());
  for (const auto& [id, s] : submaps_)
  {
    GaussianCloud part = world_points(id);
    out.insert(out.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
  }
  return out;
}

size_t SubmapStore::resident_count() const
{
  size_t n = 0;
  for (const auto& [id, s] : submaps_)
  {
    if (s.loaded)
    {
      n += s.point_count;
    }
  }
  return n;
}

size_t SubmapStore::global_count() const
{
  size_t n = 0;
  for (const auto& [id, s] : submaps_)
  {
    n += s.point_count;
  }
  return n;
}

void SubmapStore::set_hierarchy(uint64_t id, ClusterNode root)
{
  mutable_submap(id).hierarchy = std::move(root);
}

ClusterNode* SubmapStore::hierarchy(uint64_t id)
{
  Submap& s = mutable_submap(id);
  return s.hierarchy ? &*s.hierarchy : nullptr;
}

void SubmapStore::save(const std::filesystem::path& dir) const
{
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["version"] = kSubmapVersion;
  index["r_submap"] = r_submap_;
  index["r_load"] = r_load_;
  index["next_id"] = next_id_;
  index["submaps"] = nlohmann::json::array();
  for (const auto& [id, s] : submaps_)
  {
    Submap copy = s;
    copy.points = stored_points(s);
    save_submap(dir / ("submap_" + std::to_string(id) + ".atls"), copy);
    index["submaps"].push_back({{"id", id}, {"loaded", s.loaded}});
  }
  std::ofstream out(dir / "store.json");
  out << index.dump(2) << '\n';
}

SubmapStore SubmapStore::load(const std::filesystem::path& dir)
{
  std::ifstream in(dir / "store.json");
  if (!in)
  {
    throw std::runtime_error("cannot open " + (dir / "store.json").string());
  }
  nlohmann::json index;
  try
  {
    in >> index;
  }
  catch (const nlohmann::json::exception& e)
  {
    throw FormatError(std::string("malformed store index: ") + e.what());
  }
  if (index.value("version", 0u) != kSubmapVersion)
  {
    throw FormatError("unsupported store version");
  }
  SubmapStore store(index.at("r_submap").get<double>(), index.at("r_load").get<double>());
  store.next_id_ = index.at("next_id").get<uint64_t>();
  for (const auto& entry : index.at("submaps"))
  {
    const auto id = entry.at("id").get<uint64_t>();
    Submap s = load_submap(dir / ("submap_" + std::to_string(id) + ".atls"));
    if (s.id != id)
    {
      throw FormatError("submap file id does not match index");
    }
    s.loaded = entry.at("loaded").get<bool>();
    store.submaps_.emplace(id, std::move(s));
  }
  return store;
}

}  // namespace atlas
