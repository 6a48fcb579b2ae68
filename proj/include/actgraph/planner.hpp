#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "actgraph/archive.hpp"
#include "actgraph/querymodel.hpp"

namespace actgraph {

// ---- spanning trees ---------------------------------------------------------

struct SpanningTree {
  std::string root;
  std::map<std::string, std::string> parent;  // root excluded
  std::vector<std::size_t> tree_edges;        // indices into ActivityGraph::edges, ascending
  double total_weight = 0.0;
};

// sum over the edge's relationships of ln p(r); <= 0
double edge_weight(const QueryEdge& edge, const RelFreqTable& freqs);

// Sum of the given edge weights, accumulated in ascending value order so that
// equal weight multisets always give bit-identical totals.
double tree_weight(const ActivityGraph& graph, const std::vector<std::size_t>& edges, const RelFreqTable& freqs);

// Kruskal over (weight, lexicographic endpoint ids). Throws ValidationError
// on disconnected graphs.
SpanningTree hpst(const ActivityGraph& graph, const RelFreqTable& freqs);

// Roots the given edge set: the endpoint of its most negative edge, preferring
// the endpoint with more attributes, then the smaller node id.
SpanningTree make_tree(const ActivityGraph& graph, std::vector<std::size_t> edges, const RelFreqTable& freqs);

inline constexpr std::size_t kMaxEnumerationNodes = 8;
// Every spanning tree; refuses graphs above kMaxEnumerationNodes nodes.
std::vector<SpanningTree> enumerate_spanning_trees(const ActivityGraph& graph, const RelFreqTable& freqs = {});

// Query nodes in root-to-leaf (breadth-first) order.
std::vector<std::string> tree_order(const ActivityGraph& graph, const SpanningTree& tree);

// ---- threshold selection ----------------------------------------------------

// Fixed-width histogram of probabilities on [0, 1].
struct Histogram {
  std::vector<std::uint64_t> counts;

  explicit Histogram(std::size_t bins = 1000) : counts(bins, 0) {}
  std::size_t bins() const { return counts.size(); }
  double bin_width() const { return 1.0 / static_cast<double>(counts.size()); }
  double lower_edge(std::size_t bin) const { return static_cast<double>(bin) / static_cast<double>(counts.size()); }
  std::size_t bin_of(double p) const;
  void add(double p);
  std::uint64_t total() const;
  // Count of samples p >= lower_edge(bin).
  std::uint64_t count_at_or_above(std::size_t bin) const;
  bool operator==(const Histogram&) const = default;
};

// Scores of one concept on true instances and on background. positive_missing
// counts true instances that produced no score at all (missed detections);
// they can never pass a threshold.
struct ConceptStats {
  Histogram positive;
  Histogram background;
  std::uint64_t positive_missing = 0;
  bool operator==(const ConceptStats&) const = default;
};

// Keys: "class:<name>", "attr:<name>", "rel:<name>".
struct ScoreStats {
  std::map<std::string, ConceptStats> concepts;
  const ConceptStats& at(const std::string& key) const;
  bool operator==(const ScoreStats&) const = default;
};

std::string class_key(ObjectClass c);
std::string attribute_key(const std::string& attribute);
std::string relationship_key(Relationship r);

struct ThresholdAssignment {
  std::map<std::string, double> node_tau;
  std::vector<double> edge_tau;  // aligned with ActivityGraph::edges
  double eta = 1.0;
  // Estimated positive pass rate per component at the chosen thresholds.
  std::map<std::string, double> node_recall;
  std::vector<double> edge_recall;
};

// eta^(1/m)
double per_component_target(double eta, std::size_t components);

// Largest histogram lower edge whose positive pass rate is at least target.
// Throws InfeasibleError when no threshold reaches the target.
double inverse_cdf_threshold(const ConceptStats& stats, double target);

// Equal recall allocation: each of the m = |nodes| + |edges| components gets
// eta^(1/m). A component made of c concepts thresholds each concept at
// (eta^(1/m))^(1/c) and uses the product of the concept thresholds.
ThresholdAssignment select_thresholds(const ActivityGraph& graph, const ScoreStats& stats, double eta);

// Every tau multiplied by factor.
ThresholdAssignment relax(const ThresholdAssignment& taus, double factor);

}  // namespace actgraph
