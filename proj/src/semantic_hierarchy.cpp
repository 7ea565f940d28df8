#include "atlas/semantic_hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include "atlas/submap_store.hpp"

namespace atlas
{
namespace
{
constexpr size_t kNone = std::numeric_limits<size_t>::max();

// Upper-triangle storage of a symmetric matrix with zero diagonal.
class CondensedMatrix
{
public:
  explicit CondensedMatrix(size_t n) : n_(n), values_(n * (n - 1) / 2) {}

  size_t size() const { return n_; }

  double& operator()(size_t i, size_t j) { return values_[offset(i, j)]; }
  double operator()(size_t i, size_t j) const { return values_[offset(i, j)]; }

private:
  size_t offset(size_t i, size_t j) const
  {
    if (i > j)
    {
      std::swap(i, j);
    }
    return i * n_ - i * (i + 1) / 2 + (j - i - 1);
  }

  size_t n_;
  std::vector<double> values_;
};

double blended_distance(const GaussianPoint& a, const GaussianPoint& b, double lambda,
                        size_t* zero_feature_pairs)
{
  const double q_e = (a.mu - b.mu).norm();
  if (lambda == 0.0)
  {
    return q_e;
  }
  const double na = a.feature.norm();
  const double nb = b.feature.norm();
  double q_s = 0.0;
  if (na > 0.0 && nb > 0.0)
  {
    q_s = std::clamp(a.feature.dot(b.feature) / (na * nb), -1.0, 1.0);
  }
  else if (zero_feature_pairs != nullptr)
  {
    ++*zero_feature_pairs;
  }
  return q_e + lambda * (1.0 - q_s);
}

std::vector<Merge> nn_chain_average(CondensedMatrix d)
{
  const size_t n = d.size();
  std::vector<Merge> merges;
  if (n < 2)
  {
    return merges;
  }
  merges.reserve(n - 1);
  std::vector<char> active(n, 1);
  std::vector<size_t> sizes(n, 1);
  std::vector<size_t> chain;
  chain.reserve(n);

  while (merges.size() + 1 < n)
  {
    if (chain.empty())
    {
      chain.push_back(static_cast<size_t>(
          std::find(active.begin(), active.end(), 1) - active.begin()));
    }
    size_t x = kNone;
    size_t y = kNone;
    double best_distance = 0.0;
    while (true)
    {
      x = chain.back();
      const size_t previous = chain.size() >= 2 ? chain[chain.size() - 2] : kNone;
      size_t best = previous;
      best_distance = previous != kNone ? d(x, previous) : std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < n; ++k)
      {
        if (!active[k] || k == x)
        {
          continue;
        }
        const double dk = d(x, k);
        if (dk < best_distance)
        {
          best = k;
          best_distance = dk;
        }
      }
      if (best == previous)
      {
        y = previous;
        break;
      }
      chain.push_back(best);
    }
    chain.pop_back();
    chain.pop_back();

    const size_t a = std::min(x, y);
    const size_t b = std::max(x, y);
    merges.push_back({a, b, best_distance});

    const double wa = static_cast<double>(sizes[a]);
    const double wb = static_cast<double>(sizes[b]);
    for (size_t k = 0; k < n; ++k)
    {
      if (!active[k] || k == a || k == b)
      {
        continue;
      }
      d(a, k) = (wa * d(a, k) + wb * d(b, k)) / (wa + wb);
    }
    active[b] = 0;
    sizes[a] += sizes[b];
  }
  return merges;
}

struct UnionFind
{
  explicit UnionFind(size_t n) : parent(n)
  {
    std::iota(parent.begin(), parent.end(), size_t{0});
  }
  size_t find(size_t x)
  {
    while (parent[x] != x)
    {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(size_t a, size_t b)
  {
    a = find(a);
    b = find(b);
    if (a != b)
    {
      parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::vector<size_t> parent;
};

void summarize(ClusterNode& node, std::span<const GaussianPoint> points,
               const std::vector<uint64_t>& members)
{
  node.centroid.setZero();
  const Eigen::Index n_c = points[members.front()].feature.size();
  node.mean_feature = VecX::Zero(n_c);
  for (uint64_t m : members)
  {
    node.centroid += points[m].mu;
    node.mean_feature += points[m].feature;
  }
  node.centroid /= static_cast<double>(members.size());
  node.mean_feature /= static_cast<double>(members.size());
}

template <typename Bytes>
void fnv_mix(uint64_t& h, const Bytes& value)
{
  unsigned char raw[sizeof(Bytes)];
  std::memcpy(raw, &value, sizeof(Bytes));
  for (unsigned char c : raw)
  {
    h ^= c;
    h *= 1099511628211ULL;
  }
}

void hash_node(uint64_t& h, const ClusterNode& node)
{
  fnv_mix(h, static_cast<uint8_t>(node.level));
  fnv_mix(h, static_cast<uint64_t>(node.children.size()));
  fnv_mix(h, static_cast<uint64_t>(node.members.size()));
  for (uint64_t m : node.members)
  {
    fnv_mix(h, m);
  }
  for (int i = 0; i < 3; ++i)
  {
    fnv_mix(h, node.centroid(i));
  }
  for (Eigen::Index i = 0; i < node.mean_feature.size(); ++i)
  {
    fnv_mix(h, node.mean_feature(i));
  }
  for (const ClusterNode& child : node.children)
  {
    hash_node(h, child);
  }
}

void preorder(const ClusterNode& node, size_t& counter,
              const std::function<void(const ClusterNode&, size_t)>& visit)
{
  visit(node, counter++);
  for (const ClusterNode& child : node.children)
  {
    preorder(child, counter, visit);
  }
}
}  // namespace

const char* to_string(ClusterLevel level)
{
  switch (level)
  {
    case ClusterLevel::Object:
      return "object";
    case ClusterLevel::Region:
      return "region";
    case ClusterLevel::Submap:
      return "submap";
  }
  return "unknown";
}

MatX pairwise_distance(std::span<const GaussianPoint> points, double lambda,
                       size_t* zero_feature_pairs)
{
  if (lambda < 0.0)
  {
    throw std::invalid_argument("lambda must be nonnegative");
  }
  const auto n = static_cast<Eigen::Index>(points.size());
  MatX q = MatX::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
  {
    for (Eigen::Index j = i + 1; j < n; ++j)
    {
      q(i, j) = q(j, i) = blended_distance(points[i], points[j], lambda, zero_feature_pairs);
    }
  }
  return q;
}

std::vector<Merge> average_linkage(const MatX& distance)
{
  if (distance.rows() != distance.cols())
  {
    throw std::invalid_argument("distance matrix must be square");
  }
  const auto n = static_cast<size_t>(distance.rows());
  if (n < 2)
  {
    return {};
  }
  CondensedMatrix d(n);
  for (size_t i = 0; i < n; ++i)
  {
    for (size_t j = i + 1; j < n; ++j)
    {
      d(i, j) = distance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  return nn_chain_average(std::move(d));
}

std::vector<size_t> cut_labels(size_t n, std::span<const Merge> merges, double cut)
{
  UnionFind uf(n);
  for (const Merge& m : merges)
  {
    if (m.height <= cut)
    {
      uf.unite(m.a, m.b);
    }
  }
  std::vector<size_t> labels(n);
  std::map<size_t, size_t> label_of_root;
  for (size_t i = 0; i < n; ++i)
  {
    const size_t root = uf.find(i);
    auto [it, inserted] = label_of_root.try_emplace(root, label_of_root.size());
    labels[i] = it->second;
  }
  return labels;
}

ClusterNode build_hierarchy(std::span<const GaussianPoint> points, const HierarchyConfig& config)
{
  if (points.empty())
  {
    throw std::invalid_argument("cannot cluster an empty point list");
  }
  if (!(config.cut_object < config.cut_region))
  {
    throw std::invalid_argument("cut_object must be below cut_region");
  }

  // Clustering units: either the points themselves or voxel proxies.
  GaussianCloud proxy_storage;
  std::vector<std::vector<uint64_t>> unit_members;
  std::span<const GaussianPoint> units = points;
  if (points.size() > config.max_points)
  {
    using Cell = std::tuple<int64_t, int64_t, int64_t>;
    std::map<Cell, size_t> slot;
    for (size_t i = 0; i < points.size(); ++i)
    {
      const Vec3& p = points[i].mu;
      const Cell cell{static_cast<int64_t>(std::floor(p.x() / config.proxy_voxel)),
                      static_cast<int64_t>(std::floor(p.y() / config.proxy_voxel)),
                      static_cast<int64_t>(std::floor(p.z() / config.proxy_voxel))};
      auto [it, inserted] = slot.try_emplace(cell, unit_members.size());
      if (inserted)
      {
        unit_members.emplace_back();
      }
      unit_members[it->second].push_back(i);
    }
    proxy_storage.resize(unit_members.size());
    for (size_t u = 0; u < unit_members.size(); ++u)
    {
      ClusterNode summary;
      summarize(summary, points, unit_members[u]);
      proxy_storage[u].mu = summary.centroid;
      proxy_storage[u].feature = summary.mean_feature;
    }
    units = proxy_storage;
  }
  else
  {
    unit_members.resize(points.size());
    for (size_t i = 0; i < points.size(); ++i)
    {
      unit_members[i] = {i};
    }
  }

  const size_t n = units.size();
  std::vector<Merge> merges;
  if (n >= 2)
  {
    CondensedMatrix d(n);
    for (size_t i = 0; i < n; ++i)
    {
      for (size_t j = i + 1; j < n; ++j)
      {
        d(i, j) = blended_distance(units[i], units[j], config.lambda, nullptr);
      }
    }
    merges = nn_chain_average(std::move(d));
  }
  const std::vector<size_t> object_label = cut_labels(n, merges, config.cut_object);
  const std::vector<size_t> region_label = cut_labels(n, merges, config.cut_region);

  const size_t n_objects = *std::max_element(object_label.begin(), object_label.end()) + 1;
  const size_t n_regions = *std::max_element(region_label.begin(), region_label.end()) + 1;

  std::vector<std::vector<uint64_t>> object_members(n_objects);
  std::vector<size_t> region_of_object(n_objects, kNone);
  for (size_t u = 0; u < n; ++u)
  {
    auto& bucket = object_members[object_label[u]];
    bucket.insert(bucket.end(), unit_members[u].begin(), unit_members[u].end());
    region_of_object[object_label[u]] = region_label[u];
  }

  ClusterNode root;
  root.level = ClusterLevel::Submap;
  root.children.resize(n_regions);
  std::vector<std::vector<uint64_t>> region_members(n_regions);
  for (size_t o = 0; o < n_objects; ++o)
  {
    std::sort(object_members[o].begin(), object_members[o].end());
    ClusterNode leaf;
    leaf.level = ClusterLevel::Object;
    leaf.members = std::move(object_members[o]);
    summarize(leaf, points, leaf.members);
    const size_t r = region_of_object[o];
    region_members[r].insert(region_members[r].end(), leaf.members.begin(), leaf.members.end());
    root.children[r].children.push_back(std::move(leaf));
  }
  std::vector<uint64_t> all(points.size());
  std::iota(all.begin(), all.end(), uint64_t{0});
  for (size_t r = 0; r < n_regions; ++r)
  {
    root.children[r].level = ClusterLevel::Region;
    summarize(root.children[r], points, region_members[r]);
  }
  summarize(root, points, all);
  return root;
}

void score_in_place(ClusterNode& node, const RelevancyQuery& query)
{
  if (node.is_leaf())
  {
    if (node.mean_feature.size() != query.compressed_dim())
    {
      throw CodecError("cluster feature length does not match basis");
    }
    double r = 0.0;
    try
    {
      r = query(node.mean_feature);
    }
    catch (const CodecError&)
    {
      // zero-norm lifted feature carries no relevancy
      r = 0.0;
    }
    node.utility = std::max(0.0, r);
    return;
  }
  double sum = 0.0;
  for (ClusterNode& child : node.children)
  {
    score_in_place(child, query);
    sum += child.utility;
  }
  node.utility = sum;
}

ClusterNode score_task(ClusterNode root, const TaskQuery& task, const PcaBasis& basis)
{
  score_in_place(root, RelevancyQuery(basis, task.embedding));
  return root;
}

uint64_t structure_hash(const ClusterNode& root)
{
  uint64_t h = 1469598103934665603ULL;
  hash_node(h, root);
  return h;
}

void for_each_preorder(const ClusterNode& root,
                       const std::function<void(const ClusterNode&, size_t)>& visit)
{
  size_t counter = 0;
  preorder(root, counter, visit);
}

std::vector<const ClusterNode*> object_leaves(const ClusterNode& root)
{
  std::vector<const ClusterNode*> out;
  for_each_preorder(root, [&](const ClusterNode& node, size_t) {
    if (node.is_leaf())
    {
      out.push_back(&node);
    }
  });
  return out;
}

void score_store(SubmapStore& store, const TaskQuery& task, const PcaBasis& basis)
{
  const RelevancyQuery query(basis, task.embedding);
  for (const auto& [id, s] : store.submaps())
  {
    if (ClusterNode* root = store.hierarchy(id))
    {
      score_in_place(*root, query);
    }
  }
}

std::vector<RetrievedNode> top_k_retrieve(const SubmapStore& store, const TaskQuery& task,
                                          const PcaBasis& basis, int k)
{
  if (k <= 0)
  {
    throw std::invalid_argument("k must be positive");
  }
  const RelevancyQuery query(basis, task.embedding);
  std::vector<RetrievedNode> all;
  for (const auto& [id, s] : store.submaps())
  {
    if (!s.hierarchy)
    {
      continue;
    }
    ClusterNode scored = *s.hierarchy;
    score_in_place(scored, query);
    for_each_preorder(scored, [&](const ClusterNode& node, size_t index) {
      RetrievedNode r;
      r.submap_id = id;
      r.preorder_index = index;
      r.level = node.level;
      r.world_centroid = s.anchor * node.centroid;
      size_t count = 0;
      for_each_preorder(node, [&](const ClusterNode& n, size_t) { count += n.members.size(); });
      r.member_count = count;
      r.score = node.utility;
      all.push_back(r);
    });
  }
  std::stable_sort(all.begin(), all.end(), [](const RetrievedNode& a, const RetrievedNode& b) {
    if (a.score != b.score)
    {
      return a.score > b.score;
    }
    return std::tie(a.submap_id, a.preorder_index) < std::tie(b.submap_id, b.preorder_index);
  });
  if (all.size() > static_cast<size_t>(k))
  {
    all.resize(static_cast<size_t>(k));
  }
  return all;
}

}  // namespace atlas
