#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "atlas/types.hpp"

namespace atlas
{
class SubmapStore;

struct GraphVertex
{
  Vec3 position = Vec3::Zero();
  double utility = 0.0;
  int64_t partition = -1;
  /// Caller-defined identity, e.g. the submap id of a high-level vertex.
  uint64_t label = 0;
};

struct GraphEdge
{
  size_t to;
  double weight;
};

/// Undirected weighted graph over vantage points.
class SparseGraph
{
public:
  size_t add_vertex(GraphVertex v);
  /// Symmetric edge; throws on negative weight or unknown vertex.
  void add_edge(size_t a, size_t b, double weight);

  size_t size() const { return vertices_.size(); }
  const GraphVertex& vertex(size_t i) const { return vertices_.at(i); }
  std::vector<GraphVertex>& vertices() { return vertices_; }
  const std::vector<GraphVertex>& vertices() const { return vertices_; }
  /// Neighbours sorted by vertex index.
  const std::vector<GraphEdge>& neighbors(size_t i) const { return adjacency_.at(i); }
  /// Weight of the edge a-b, or +inf when absent.
  double edge_weight(size_t a, size_t b) const;
  size_t edge_count() const;

private:
  std::vector<GraphVertex> vertices_;
  std::vector<std::vector<GraphEdge>> adjacency_;
};

/// Walk through vantage points. `positions` mirror `vertices`.
struct BudgetedPath
{
  std::vector<size_t> vertices;
  std::vector<Vec3> positions;
  double total_utility = 0.0;
  double total_cost = 0.0;
};

/// Vertex per submap with a hierarchy (world-frame root centroid, root
/// utility), edges between centroids no farther apart than d_wire.
SparseGraph build_high_level(const SubmapStore& store, double d_wire);

/// Single-source shortest path distances (+inf when unreachable).
std::vector<double> dijkstra(const SparseGraph& graph, size_t source);

/// Largest finite shortest-path distance between any two vertices.
double graph_diameter(const SparseGraph& graph);

struct BudgetedPlannerOptions
{
  /// Graphs up to this size are solved exactly.
  size_t exact_limit = 15;
};

/// Walk from `start` maximizing the summed utility of distinct visited
/// vertices with total edge weight <= budget.
///
/// Exact (label-setting search over (vertex, visited set) keeping the
/// cheapest walk per label) up to `exact_limit` vertices, greedy insertion
/// over shortest-path legs above. Ties: lower cost, then lexicographically
/// smaller vertex sequence.
BudgetedPath plan_budgeted(const SparseGraph& graph, size_t start, double budget,
                           const BudgetedPlannerOptions& options = {});

/// Sum of distinct-vertex utilities and edge weights along a walk; throws if
/// consecutive vertices are not adjacent.
BudgetedPath evaluate_walk(const SparseGraph& graph, const std::vector<size_t>& walk);

struct RefinedPath
{
  /// Candidate vantage points (object leaves of every visited partition).
  SparseGraph fine;
  /// Walk over `fine`; cost is measured from the high-level start position.
  BudgetedPath path;
};

/// Expand a high-level path into object-level vantage points, preserving the
/// partition order. Vertices are inserted greedily by utility per unit
/// detour while the total cost stays within high_path.total_cost +
/// budget_remainder. Zero-utility vertices are never inserted.
RefinedPath refine_within_partitions(const SubmapStore& store, const SparseGraph& high,
                                     const BudgetedPath& high_path, double budget_remainder);

/// One JSON object per line: {vertex, position, utility, cumulative_cost}.
void write_path_trace(std::ostream& out, const SparseGraph& graph, const BudgetedPath& path);

}  // namespace atlas
