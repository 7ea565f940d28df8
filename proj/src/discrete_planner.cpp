#include "atlas/discrete_planner.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

#include "atlas/semantic_hierarchy.hpp"
#include "atlas/submap_store.hpp"

namespace atlas
{
namespace
{
constexpr double kInf = std::numeric_limits<double>::infinity();

// Dijkstra that also records predecessors (lowest index wins on ties).
std::pair<std::vector<double>, std::vector<size_t>> shortest_path_tree(const SparseGraph& graph,
                                                                       size_t source)
{
  const size_t n = graph.size();
  std::vector<double> dist(n, kInf);
  std::vector<size_t> pred(n, n);
  using Item = std::pair<double, size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  dist[source] = 0.0;
  open.emplace(0.0, source);
  while (!open.empty())
  {
    auto [d, v] = open.top();
    open.pop();
    if (d > dist[v])
    {
      continue;
    }
    for (const GraphEdge& e : graph.neighbors(v))
    {
      const double nd = d + e.weight;
      if (nd < dist[e.to] || (nd == dist[e.to] && v < pred[e.to]))
      {
        const bool improved = nd < dist[e.to];
        dist[e.to] = nd;
        pred[e.to] = v;
        if (improved)
        {
          open.emplace(nd, e.to);
        }
      }
    }
  }
  return {dist, pred};
}

double mask_utility(const SparseGraph& graph, uint32_t mask)
{
  double u = 0.0;
  for (size_t i = 0; i < graph.size(); ++i)
  {
    if (mask & (1u << i))
    {
      u += graph.vertex(i).utility;
    }
  }
  return u;
}

BudgetedPath plan_exact(const SparseGraph& graph, size_t start, double budget)
{
  const size_t n = graph.size();
  const size_t n_masks = size_t{1} << n;
  const size_t n_states = n * n_masks;
  constexpr uint32_t kNoPred = std::numeric_limits<uint32_t>::max();
  std::vector<double> cost(n_states, kInf);
  std::vector<uint32_t> pred(n_states, kNoPred);

  auto state_of = [&](size_t v, size_t mask) { return v * n_masks + mask; };
  auto sequence_of = [&](uint32_t state) {
    std::vector<size_t> seq;
    for (uint32_t s = state; s != kNoPred; s = pred[s])
    {
      seq.push_back(s / n_masks);
    }
    std::reverse(seq.begin(), seq.end());
    return seq;
  };

  using Item = std::pair<double, uint32_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  const auto start_state = static_cast<uint32_t>(state_of(start, size_t{1} << start));
  cost[start_state] = 0.0;
  open.emplace(0.0, start_state);

  while (!open.empty())
  {
    auto [c, s] = open.top();
    open.pop();
    if (c > cost[s])
    {
      continue;
    }
    const size_t v = s / n_masks;
    const size_t mask = s % n_masks;
    for (const GraphEdge& e : graph.neighbors(v))
    {
      const double nc = c + e.weight;
      if (nc > budget)
      {
        continue;
      }
      const auto ns = static_cast<uint32_t>(state_of(e.to, mask | (size_t{1} << e.to)));
      if (nc < cost[ns])
      {
        cost[ns] = nc;
        pred[ns] = s;
        open.emplace(nc, ns);
      }
      else if (nc == cost[ns] && pred[ns] != s)
      {
        std::vector<size_t> current = sequence_of(ns);
        const uint32_t old = pred[ns];
        pred[ns] = s;
        if (!(sequence_of(ns) < current))
        {
          pred[ns] = old;
        }
      }
    }
  }

  uint32_t best = start_state;
  double best_utility = mask_utility(graph, static_cast<uint32_t>(size_t{1} << start));
  std::vector<size_t> best_sequence = {start};
  for (uint32_t s = 0; s < n_states; ++s)
  {
    if (cost[s] == kInf)
    {
      continue;
    }
    const double u = mask_utility(graph, static_cast<uint32_t>(s % n_masks));
    if (u < best_utility)
    {
      continue;
    }
    if (u == best_utility && cost[s] > cost[best])
    {
      continue;
    }
    std::vector<size_t> seq = sequence_of(s);
    if (u == best_utility && cost[s] == cost[best] && !(seq < best_sequence))
    {
      continue;
    }
    best = s;
    best_utility = u;
    best_sequence = std::move(seq);
  }
  return evaluate_walk(graph, best_sequence);
}

BudgetedPath plan_greedy(const SparseGraph& graph, size_t start, double budget)
{
  const size_t n = graph.size();
  std::vector<std::vector<double>> dist(n);
  std::vector<std::vector<size_t>> pred(n);
  for (size_t i = 0; i < n; ++i)
  {
    std::tie(dist[i], pred[i]) = shortest_path_tree(graph, i);
  }
  auto leg = [&](size_t from, size_t to) {
    std::vector<size_t> rev;
    for (size_t v = to; v != from; v = pred[from][v])
    {
      rev.push_back(v);
    }
    std::reverse(rev.begin(), rev.end());
    return rev;
  };
  auto expand = [&](const std::vector<size_t>& targets) {
    std::vector<size_t> walk = {targets.front()};
    for (size_t i = 1; i < targets.size(); ++i)
    {
      const std::vector<size_t> l = leg(targets[i - 1], targets[i]);
      walk.insert(walk.end(), l.begin(), l.end());
    }
    return walk;
  };

  std::vector<size_t> targets = {start};
  BudgetedPath current = evaluate_walk(graph, targets);
  std::vector<char> collected(n, 0);
  for (size_t v : current.vertices)
  {
    collected[v] = 1;
  }

  while (true)
  {
    double best_ratio = -1.0;
    double best_gain = 0.0;
    std::vector<size_t> best_targets;
    BudgetedPath best_path;
    for (size_t v = 0; v < n; ++v)
    {
      if (collected[v] || graph.vertex(v).utility <= 0.0 || dist[start][v] == kInf)
      {
        continue;
      }
      for (size_t pos = 1; pos <= targets.size(); ++pos)
      {
        const size_t prev = targets[pos - 1];
        double added = dist[prev][v];
        if (pos < targets.size())
        {
          added += dist[v][targets[pos]] - dist[prev][targets[pos]];
        }
        if (current.total_cost + added > budget + 1e-12)
        {
          continue;
        }
        std::vector<size_t> candidate = targets;
        candidate.insert(candidate.begin() + static_cast<std::ptrdiff_t>(pos), v);
        BudgetedPath path = evaluate_walk(graph, expand(candidate));
        if (path.total_cost > budget)
        {
          continue;
        }
        const double gain = path.total_utility - current.total_utility;
        const double detour = std::max(path.total_cost - current.total_cost, 0.0);
        const double ratio = detour > 0.0 ? gain / detour : kInf;
        if (ratio > best_ratio || (ratio == best_ratio && gain > best_gain))
        {
          best_ratio = ratio;
          best_gain = gain;
          best_targets = std::move(candidate);
          best_path = std::move(path);
        }
      }
    }
    if (best_targets.empty())
    {
      break;
    }
    targets = std::move(best_targets);
    current = std::move(best_path);
    for (size_t v : current.vertices)
    {
      collected[v] = 1;
    }
  }
  return current;
}
}  // namespace

size_t SparseGraph::add_vertex(GraphVertex v)
{
  vertices_.push_back(std::move(v));
  adjacency_.emplace_back();
  return vertices_.size() - 1;
}

void SparseGraph::add_edge(size_t a, size_t b, double weight)
{
  if (a >= size() || b >= size())
  {
    throw std::out_of_range("edge references an unknown vertex");
  }
  if (!(weight >= 0.0))
  {
    throw std::invalid_argument("edge weights must be nonnegative");
  }
  if (a == b)
  {
    return;
  }
  auto insert = [&](size_t from, size_t to) {
    auto& adj = adjacency_[from];
    auto it = std::lower_bound(adj.begin(), adj.end(), to,
                               [](const GraphEdge& e, size_t t) { return e.to < t; });
    if (it != adj.end() && it->to == to)
    {
      it->weight = weight;
    }
    else
    {
      adj.insert(it, GraphEdge{to, weight});
    }
  };
  insert(a, b);
  insert(b, a);
}

double SparseGraph::edge_weight(size_t a, size_t b) const
{
  for (const GraphEdge& e : neighbors(a))
  {
    if (e.to == b)
    {
      return e.weight;
    }
  }
  return kInf;
}

size_t SparseGraph::edge_count() const
{
  size_t twice = 0;
  for (const auto& adj : adjacency_)
  {
    twice += adj.size();
  }
  return twice / 2;
}

SparseGraph build_high_level(const SubmapStore& store, double d_wire)
{
  SparseGraph graph;
  for (const auto& [id, s] : store.submaps())
  {
    if (!s.hierarchy)
    {
      continue;
    }
    GraphVertex v;
    v.position = s.anchor * s.hierarchy->centroid;
    v.utility = s.hierarchy->utility;
    v.partition = static_cast<int64_t>(id);
    v.label = id;
    graph.add_vertex(v);
  }
  for (size_t i = 0; i < graph.size(); ++i)
  {
    for (size_t j = i + 1; j < graph.size(); ++j)
    {
      const double d = (graph.vertex(i).position - graph.vertex(j).position).norm();
      if (d <= d_wire)
      {
        graph.add_edge(i, j, d);
      }
    }
  }
  return graph;
}

std::vector<double> dijkstra(const SparseGraph& graph, size_t source)
{
  if (source >= graph.size())
  {
    throw std::out_of_range("source vertex not in graph");
  }
  return shortest_path_tree(graph, source).first;
}

double graph_diameter(const SparseGraph& graph)
{
  double diameter = 0.0;
  for (size_t i = 0; i < graph.size(); ++i)
  {
    for (double d : dijkstra(graph, i))
    {
      if (d != kInf)
      {
        diameter = std::max(diameter, d);
      }
    }
  }
  return diameter;
}

BudgetedPath evaluate_walk(const SparseGraph& graph, const std::vector<size_t>& walk)
{
  BudgetedPath path;
  if (walk.empty())
  {
    return path;
  }
  std::vector<char> seen(graph.size(), 0);
  for (size_t i = 0; i < walk.size(); ++i)
  {
    const size_t v = walk[i];
    if (v >= graph.size())
    {
      throw std::out_of_range("walk references an unknown vertex");
    }
    if (i > 0)
    {
      const double w = graph.edge_weight(walk[i - 1], v);
      if (w == kInf)
      {
        throw std::invalid_argument("walk uses a missing edge");
      }
      path.total_cost += w;
    }
    seen[v] = 1;
    path.vertices.push_back(v);
    path.positions.push_back(graph.vertex(v).position);
  }
  for (size_t v = 0; v < graph.size(); ++v)
  {
    if (seen[v])
    {
      path.total_utility += graph.vertex(v).utility;
    }
  }
  return path;
}

BudgetedPath plan_budgeted(const SparseGraph& graph, size_t start, double budget,
                           const BudgetedPlannerOptions& options)
{
  if (start >= graph.size())
  {
    throw std::out_of_range("start vertex not in graph");
  }
  if (!(budget >= 0.0))
  {
    throw std::invalid_argument("budget must be nonnegative");
  }
  if (graph.size() <= std::min<size_t>(options.exact_limit, 20))
  {
    return plan_exact(graph, start, budget);
  }
  return plan_greedy(graph, start, budget);
}

RefinedPath refine_within_partitions(const SubmapStore& store, const SparseGraph& high,
                                     const BudgetedPath& high_path, double budget_remainder)
{
  RefinedPath out;
  if (high_path.vertices.empty())
  {
    return out;
  }
  const double budget = high_path.total_cost + std::max(budget_remainder, 0.0);
  const Vec3 origin = high_path.positions.front();

  // Distinct partitions in visiting order.
  std::vector<int64_t> order;
  for (size_t v : high_path.vertices)
  {
    const int64_t p = high.vertex(v).partition;
    if (std::find(order.begin(), order.end(), p) == order.end())
    {
      order.push_back(p);
    }
  }

  std::vector<std::vector<size_t>> candidates(order.size());
  for (size_t slot = 0; slot < order.size(); ++slot)
  {
    const auto id = static_cast<uint64_t>(order[slot]);
    if (order[slot] < 0 || !store.contains(id) || !store.submap(id).hierarchy)
    {
      continue;
    }
    const Submap& s = store.submap(id);
    for (const ClusterNode* leaf : object_leaves(*s.hierarchy))
    {
      GraphVertex v;
      v.position = s.anchor * leaf->centroid;
      v.utility = leaf->utility;
      v.partition = order[slot];
      v.label = id;
      candidates[slot].push_back(out.fine.add_vertex(v));
    }
  }

  // Selected stops per partition; the route is origin followed by the
  // concatenation of these lists.
  std::vector<std::vector<size_t>> chosen(order.size());
  std::vector<char> used(out.fine.size(), 0);

  auto route_positions = [&]() {
    std::vector<Vec3> pts = {origin};
    for (const auto& list : chosen)
    {
      for (size_t v : list)
      {
        pts.push_back(out.fine.vertex(v).position);
      }
    }
    return pts;
  };
  auto route_cost = [](const std::vector<Vec3>& pts) {
    double c = 0.0;
    for (size_t i = 1; i < pts.size(); ++i)
    {
      c += (pts[i] - pts[i - 1]).norm();
    }
    return c;
  };

  double current_cost = 0.0;
  while (true)
  {
    double best_ratio = -1.0;
    double best_utility = -1.0;
    double best_cost = 0.0;
    size_t best_slot = 0;
    size_t best_pos = 0;
    size_t best_vertex = out.fine.size();
    for (size_t slot = 0; slot < order.size(); ++slot)
    {
      for (size_t v : candidates[slot])
      {
        const double u = out.fine.vertex(v).utility;
        if (used[v] || u <= 0.0)
        {
          continue;
        }
        for (size_t pos = 0; pos <= chosen[slot].size(); ++pos)
        {
          chosen[slot].insert(chosen[slot].begin() + static_cast<std::ptrdiff_t>(pos), v);
          const double c = route_cost(route_positions());
          chosen[slot].erase(chosen[slot].begin() + static_cast<std::ptrdiff_t>(pos));
          if (c > budget)
          {
            continue;
          }
          const double detour = std::max(c - current_cost, 0.0);
          const double ratio = detour > 0.0 ? u / detour : kInf;
          if (ratio > best_ratio || (ratio == best_ratio && u > best_utility))
          {
            best_ratio = ratio;
            best_utility = u;
            best_cost = c;
            best_slot = slot;
            best_pos = pos;
            best_vertex = v;
          }
        }
      }
    }
    if (best_vertex == out.fine.size())
    {
      break;
    }
    chosen[best_slot].insert(chosen[best_slot].begin() + static_cast<std::ptrdiff_t>(best_pos),
                             best_vertex);
    used[best_vertex] = 1;
    current_cost = best_cost;
  }

  BudgetedPath& path = out.path;
  for (const auto& list : chosen)
  {
    for (size_t v : list)
    {
      path.vertices.push_back(v);
      path.positions.push_back(out.fine.vertex(v).position);
      path.total_utility += out.fine.vertex(v).utility;
    }
  }
  path.total_cost = route_cost(route_positions());
  return out;
}

void write_path_trace(std::ostream& out, const SparseGraph& graph, const BudgetedPath& path)
{
  double cumulative = 0.0;
  for (size_t i = 0; i < path.vertices.size(); ++i)
  {
    if (i > 0)
    {
      cumulative += (path.positions[i] - path.positions[i - 1]).norm();
    }
    const size_t v = path.vertices[i];
    nlohmann::json record = {
        {"vertex", v},
        {"label", graph.vertex(v).label},
        {"position", {path.positions[i].x(), path.positions[i].y(), path.positions[i].z()}},
        {"utility", graph.vertex(v).utility},
        {"cumulative_cost", cumulative},
    };
    out << record.dump() << '\n';
  }
}

}  // namespace atlas
