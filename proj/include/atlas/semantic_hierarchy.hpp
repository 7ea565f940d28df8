#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atlas/feature_codec.hpp"
#include "atlas/splat_map.hpp"

namespace atlas
{
class SubmapStore;

enum class ClusterLevel : uint8_t
{
  Object = 0,
  Region = 1,
  Submap = 2,
};

const char* to_string(ClusterLevel level);

/// Node of the object / region / submap tree built over one submap.
/// Positions are in the submap's anchor frame.
struct ClusterNode
{
  ClusterLevel level = ClusterLevel::Object;
  std::vector<ClusterNode> children;
  std::vector<uint64_t> members;  // point indices, object leaves only
  Vec3 centroid = Vec3::Zero();
  VecX mean_feature;
  double utility = 0.0;

  bool is_leaf() const { return children.empty(); }
};

struct TaskQuery
{
  VecX embedding;
  std::optional<std::string> text;
};

struct HierarchyConfig
{
  double lambda = 1.0;
  double cut_object = 0.8;
  double cut_region = 2.5;
  /// Above this many points clustering runs on a voxel proxy.
  size_t max_points = 5000;
  double proxy_voxel = 0.1;
};

/// q = q_e + lambda * (1 - q_s) for every pair: Euclidean distance between
/// means plus the weighted cosine dissimilarity of compressed features. Pairs
/// involving a zero-norm feature use q_s = 0 and are counted in
/// `zero_feature_pairs` when given.
MatX pairwise_distance(std::span<const GaussianPoint> points, double lambda,
                       size_t* zero_feature_pairs = nullptr);

/// One agglomeration step: clusters represented by slots `a` < `b` joined at
/// `height`. Slots are point indices; the merged cluster keeps slot `a`.
struct Merge
{
  size_t a;
  size_t b;
  double height;
};

/// Average-linkage agglomeration (nearest-neighbour chain with the
/// Lance-Williams update) over a full symmetric distance matrix.
std::vector<Merge> average_linkage(const MatX& distance);

/// Flat cluster label per point after applying every merge with
/// height <= cut. Labels are numbered by smallest member index.
std::vector<size_t> cut_labels(size_t n, std::span<const Merge> merges, double cut);

/// Three-level tree: object leaves from the dendrogram cut at cut_object,
/// regions at cut_region, and a single submap root.
ClusterNode build_hierarchy(std::span<const GaussianPoint> points, const HierarchyConfig& config);

/// Object utility = max(0, task relevancy of the lifted mean feature); every
/// internal node gets the sum of its children's utilities. Structure is kept.
ClusterNode score_task(ClusterNode root, const TaskQuery& task, const PcaBasis& basis);

/// In-place variant of score_task.
void score_in_place(ClusterNode& root, const RelevancyQuery& query);

/// Hash of the tree structure (levels, members, centroids, features),
/// independent of utilities.
uint64_t structure_hash(const ClusterNode& root);

/// Visit nodes in preorder with their preorder index.
void for_each_preorder(const ClusterNode& root,
                       const std::function<void(const ClusterNode&, size_t)>& visit);

std::vector<const ClusterNode*> object_leaves(const ClusterNode& root);

struct RetrievedNode
{
  uint64_t submap_id = 0;
  size_t preorder_index = 0;
  ClusterLevel level = ClusterLevel::Object;
  Vec3 world_centroid = Vec3::Zero();
  size_t member_count = 0;
  double score = 0.0;
};

/// Score every stored hierarchy against `task` and write utilities back.
void score_store(SubmapStore& store, const TaskQuery& task, const PcaBasis& basis);

/// The k highest-utility nodes over all submaps with a hierarchy, scored
/// against `task` without modifying the store. Sorted by descending score,
/// then lower submap id, then preorder index.
std::vector<RetrievedNode> top_k_retrieve(const SubmapStore& store, const TaskQuery& task,
                                          const PcaBasis& basis, int k);

}  // namespace atlas
