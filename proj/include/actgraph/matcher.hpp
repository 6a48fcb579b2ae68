#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "actgraph/archive.hpp"
#include "actgraph/json_io.hpp"
#include "actgraph/model_bundle.hpp"
#include "actgraph/planner.hpp"

namespace actgraph {

// A proposed (query node, observation) pairing.
struct Assignment {
  std::size_t obs_index = 0;  // index into ArchiveStore::observations()
  double node_log_prob = 0.0;
};

// Tree edge between an assignment of the parent node and one of the child node.
struct Link {
  std::size_t parent = 0;  // assignment index within the parent node
  std::size_t child = 0;   // assignment index within the child node
  double edge_log_prob = 0.0;
};

struct MatchingGraph {
  std::vector<std::string> order;  // query nodes, root first
  std::map<std::string, std::vector<Assignment>> assignments;
  // Keyed by child node; links are grouped by ascending parent assignment.
  std::map<std::string, std::vector<Link>> links;

  std::size_t assignment_count() const;
  std::size_t link_count() const;
  bool empty() const { return assignment_count() == 0; }
  // Assignment index of obs_index under node, if present.
  std::optional<std::size_t> find(const std::string& node, std::size_t obs_index) const;
};

struct Grounding {
  std::vector<ObsId> mapping;  // aligned with ActivityGraph::nodes
  double tree_log_score = 0.0;
  double full_log_score = 0.0;
  Volume volume;
};

struct RootGrounding {
  std::size_t root_assignment = 0;
  Grounding grounding;
};

struct MatchDiagnostics {
  std::size_t assignments = 0;
  std::size_t links = 0;
  std::size_t root_assignments = 0;
  std::size_t infeasible_roots = 0;
  std::size_t tree_candidates = 0;
  std::size_t non_tree_rejections = 0;
  std::size_t duplicates_suppressed = 0;
};

// Root-to-leaf construction: a child assignment survives only if it links to
// at least one surviving parent assignment.
MatchingGraph build_matching_graph(const ActivityGraph& graph, const SpanningTree& tree, const ArchiveStore& store,
                                   const ThresholdAssignment& taus, const CalibrationModel& models,
                                   const EdgeContext& context = {});

// Leaf-to-root max-product over H. For every root assignment with a feasible
// completion, returns up to top_r best tree groundings (best first).
std::vector<RootGrounding> optimize_groundings(const ActivityGraph& graph, const SpanningTree& tree,
                                               const MatchingGraph& H, const ArchiveStore& store,
                                               std::size_t top_r = 1, MatchDiagnostics* diag = nullptr);

// Drops candidates failing a non-tree edge threshold; survivors get the full
// graph score. Output keeps input order.
std::vector<Grounding> rescore_full_graph(const std::vector<Grounding>& candidates, const ActivityGraph& graph,
                                          const SpanningTree& tree, const ThresholdAssignment& taus,
                                          const CalibrationModel& models, const ArchiveStore& store,
                                          const EdgeContext& context = {}, MatchDiagnostics* diag = nullptr);

// Ranking order: full_log_score descending, then earliest volume start, then
// lowest mapped obs ids.
bool ranks_before(const Grounding& a, const Grounding& b);
void sort_ranked(std::vector<Grounding>& groundings);

inline constexpr double kDuplicateIoU = 0.5;
// Greedy suppression on a ranked list.
std::vector<Grounding> deduplicate(const std::vector<Grounding>& ranked);

struct RetrievalOptions {
  double eta = 0.9;
  std::size_t k = 20;
  bool refinement = true;
  int max_rounds = 3;
  double decay = 0.5;
  std::size_t top_r = 1;
  bool reid = true;
};

struct RetrievalResult {
  std::vector<Grounding> ranked;
  ThresholdAssignment thresholds_used;
  int refinement_rounds = 0;
  SpanningTree tree;
  MatchDiagnostics diagnostics;
};

RetrievalResult retrieve(const ActivityGraph& graph, const ArchiveStore& store, const ModelBundle& bundle,
                         const RelFreqTable& freqs, const RetrievalOptions& options = {});

// Per-factor explanation of one grounding.
struct FactorBreakdown {
  std::vector<std::pair<std::string, double>> node_log;  // graph node order
  std::vector<double> edge_log;                          // graph edge order
  double total = 0.0;
};
FactorBreakdown explain(const Grounding& grounding, const ActivityGraph& graph, const CalibrationModel& models,
                        const ArchiveStore& store, const EdgeContext& context = {});

json to_json(const Volume& v);
Volume volume_from_json(const json& j);
json to_json(const ThresholdAssignment& taus, const ActivityGraph& graph);
json to_json(const SpanningTree& tree, const ActivityGraph& graph);
json to_json(const RetrievalResult& result, const ActivityGraph& graph);

}  // namespace actgraph
