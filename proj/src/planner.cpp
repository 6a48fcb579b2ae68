#include "actgraph/planner.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <numeric>

#include "actgraph/error.hpp"

namespace actgraph {

namespace {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};

std::pair<std::string, std::string> sorted_endpoints(const QueryEdge& e) {
  return e.a < e.b ? std::make_pair(e.a, e.b) : std::make_pair(e.b, e.a);
}

// Kruskal's comparison: weight, then lexicographic endpoints, then edge index.
bool edge_before(const ActivityGraph& g, const std::vector<double>& w, std::size_t i, std::size_t j) {
  if (w[i] != w[j]) return w[i] < w[j];
  const auto ei = sorted_endpoints(g.edges[i]), ej = sorted_endpoints(g.edges[j]);
  if (ei != ej) return ei < ej;
  return i < j;
}

}  // namespace

double edge_weight(const QueryEdge& edge, const RelFreqTable& freqs) {
  double w = 0.0;
  for (auto r : edge.relationships) w += std::log(freqs.of(r));
  return w;
}

double tree_weight(const ActivityGraph& graph, const std::vector<std::size_t>& edges, const RelFreqTable& freqs) {
  std::vector<double> w;
  w.reserve(edges.size());
  for (auto e : edges) w.push_back(edge_weight(graph.edges[e], freqs));
  std::sort(w.begin(), w.end());
  double total = 0.0;
  for (double v : w) total += v;
  return total;
}

SpanningTree make_tree(const ActivityGraph& graph, std::vector<std::size_t> edges, const RelFreqTable& freqs) {
  std::sort(edges.begin(), edges.end());
  SpanningTree tree;
  tree.tree_edges = edges;
  tree.total_weight = tree_weight(graph, edges, freqs);

  if (edges.empty()) {
    if (graph.nodes.empty()) throw ValidationError({"empty: graph has no nodes"});
    tree.root = graph.nodes.front().id;
  } else {
    std::vector<double> w(graph.edges.size(), 0.0);
    for (auto e : edges) w[e] = edge_weight(graph.edges[e], freqs);
    std::size_t best = edges.front();
    for (auto e : edges)
      if (edge_before(graph, w, e, best)) best = e;
    const QueryNode& a = graph.node(graph.edges[best].a);
    const QueryNode& b = graph.node(graph.edges[best].b);
    if (a.attributes.size() != b.attributes.size())
      tree.root = a.attributes.size() > b.attributes.size() ? a.id : b.id;
    else
      tree.root = std::min(a.id, b.id);
  }

  // Orient edges away from the root.
  std::map<std::string, std::vector<std::string>> adj;
  for (auto e : edges) {
    adj[graph.edges[e].a].push_back(graph.edges[e].b);
    adj[graph.edges[e].b].push_back(graph.edges[e].a);
  }
  std::deque<std::string> queue{tree.root};
  std::set<std::string> seen{tree.root};
  while (!queue.empty()) {
    auto u = queue.front();
    queue.pop_front();
    for (const auto& v : adj[u])
      if (seen.insert(v).second) {
        tree.parent[v] = u;
        queue.push_back(v);
      }
  }
  return tree;
}

SpanningTree hpst(const ActivityGraph& graph, const RelFreqTable& freqs) {
  auto violations = validate(graph);
  if (!violations.empty()) throw ValidationError(std::move(violations));

  std::vector<double> w;
  for (const auto& e : graph.edges) w.push_back(edge_weight(e, freqs));
  std::vector<std::size_t> order(graph.edges.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return edge_before(graph, w, i, j); });

  UnionFind uf(graph.nodes.size());
  std::vector<std::size_t> chosen;
  for (auto e : order) {
    if (uf.unite(*graph.node_index(graph.edges[e].a), *graph.node_index(graph.edges[e].b))) chosen.push_back(e);
    if (chosen.size() + 1 == graph.nodes.size()) break;
  }
  return make_tree(graph, chosen, freqs);
}

std::vector<SpanningTree> enumerate_spanning_trees(const ActivityGraph& graph, const RelFreqTable& freqs) {
  if (graph.nodes.size() > kMaxEnumerationNodes)
    throw RefusalError("spanning tree enumeration is limited to " + std::to_string(kMaxEnumerationNodes) + " nodes");
  auto violations = validate(graph);
  if (!violations.empty()) throw ValidationError(std::move(violations));

  const std::size_t need = graph.nodes.size() - 1;
  std::vector<SpanningTree> out;
  std::vector<std::size_t> pick;
  std::function<void(std::size_t)> rec = [&](std::size_t next) {
    if (pick.size() == need) {
      UnionFind uf(graph.nodes.size());
      for (auto e : pick)
        if (!uf.unite(*graph.node_index(graph.edges[e].a), *graph.node_index(graph.edges[e].b))) return;
      out.push_back(make_tree(graph, pick, freqs));
      return;
    }
    for (std::size_t e = next; e + (need - pick.size()) <= graph.edges.size(); ++e) {
      pick.push_back(e);
      rec(e + 1);
      pick.pop_back();
    }
  };
  rec(0);
  return out;
}

std::vector<std::string> tree_order(const ActivityGraph& graph, const SpanningTree& tree) {
  std::map<std::string, std::vector<std::string>> children;
  for (const auto& [child, par] : tree.parent) children[par].push_back(child);
  // Children in graph node order for reproducibility.
  for (auto& [p, kids] : children)
    std::sort(kids.begin(), kids.end(),
              [&](const std::string& x, const std::string& y) { return *graph.node_index(x) < *graph.node_index(y); });
  std::vector<std::string> order{tree.root};
  for (std::size_t i = 0; i < order.size(); ++i)
    for (const auto& c : children[order[i]]) order.push_back(c);
  return order;
}

// ---- thresholds -------------------------------------------------------------

std::size_t Histogram::bin_of(double p) const {
  const std::size_t n = counts.size();
  p = std::clamp(p, 0.0, 1.0);
  std::size_t idx = std::min(n - 1, static_cast<std::size_t>(p * static_cast<double>(n)));
  while (idx > 0 && p < lower_edge(idx)) --idx;
  while (idx + 1 < n && p >= lower_edge(idx + 1)) ++idx;
  return idx;
}

void Histogram::add(double p) { ++counts[bin_of(p)]; }

std::uint64_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

std::uint64_t Histogram::count_at_or_above(std::size_t bin) const {
  return std::accumulate(counts.begin() + static_cast<long>(bin), counts.end(), std::uint64_t{0});
}

const ConceptStats& ScoreStats::at(const std::string& key) const {
  auto it = concepts.find(key);
  if (it == concepts.end()) throw ConfigError("score statistics lack concept '" + key + "'");
  return it->second;
}

std::string class_key(ObjectClass c) { return "class:" + std::string(to_string(c)); }
std::string attribute_key(const std::string& attribute) { return "attr:" + attribute; }
std::string relationship_key(Relationship r) { return "rel:" + std::string(to_string(r)); }

double per_component_target(double eta, std::size_t components) {
  if (components == 0) return eta;
  return std::pow(eta, 1.0 / static_cast<double>(components));
}

namespace {

double pass_rate(const ConceptStats& s, std::size_t bin) {
  const double n = static_cast<double>(s.positive.total() + s.positive_missing);
  return static_cast<double>(s.positive.count_at_or_above(bin)) / n;
}

struct ComponentChoice {
  double tau = 1.0;
  double recall = 1.0;
};

ComponentChoice choose_component(const ScoreStats& stats, const std::vector<std::string>& keys, double target) {
  const double concept_target = std::pow(target, 1.0 / static_cast<double>(keys.size()));
  ComponentChoice out;
  for (const auto& k : keys) {
    const ConceptStats& s = stats.at(k);
    double tau;
    try {
      tau = inverse_cdf_threshold(s, concept_target);
    } catch (const InfeasibleError& ex) {
      throw InfeasibleError(k + ": " + ex.what());
    }
    out.tau *= tau;
    out.recall *= pass_rate(s, s.positive.bin_of(tau));
  }
  return out;
}

}  // namespace

double inverse_cdf_threshold(const ConceptStats& stats, double target) {
  const std::uint64_t n = stats.positive.total() + stats.positive_missing;
  if (n == 0 || stats.positive.total() == 0) throw InfeasibleError("no positive samples to estimate recall");
  constexpr double kSlack = 1e-12;
  if (target >= 1.0 - kSlack) {
    if (stats.positive_missing > 0) throw InfeasibleError("recall 1 is unreachable with missed positives");
    return 0.0;
  }
  for (std::size_t bin = stats.positive.bins(); bin-- > 0;)
    if (pass_rate(stats, bin) >= target - kSlack) return stats.positive.lower_edge(bin);
  throw InfeasibleError("target recall " + std::to_string(target) + " exceeds the best reachable pass rate " +
                        std::to_string(pass_rate(stats, 0)));
}

ThresholdAssignment select_thresholds(const ActivityGraph& graph, const ScoreStats& stats, double eta) {
  if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("recall target eta must lie in (0, 1]");
  ThresholdAssignment out;
  out.eta = eta;
  const double target = per_component_target(eta, graph.nodes.size() + graph.edges.size());
  for (const auto& n : graph.nodes) {
    std::vector<std::string> keys{class_key(n.cls)};
    for (const auto& a : n.attributes) keys.push_back(attribute_key(a));
    const auto c = choose_component(stats, keys, target);
    out.node_tau[n.id] = c.tau;
    out.node_recall[n.id] = c.recall;
  }
  for (const auto& e : graph.edges) {
    std::vector<std::string> keys;
    for (auto r : e.relationships) keys.push_back(relationship_key(r));
    const auto c = choose_component(stats, keys, target);
    out.edge_tau.push_back(c.tau);
    out.edge_recall.push_back(c.recall);
  }
  return out;
}

ThresholdAssignment relax(const ThresholdAssignment& taus, double factor) {
  ThresholdAssignment out = taus;
  for (auto& [id, t] : out.node_tau) t *= factor;
  for (auto& t : out.edge_tau) t *= factor;
  return out;
}

}  // namespace actgraph
