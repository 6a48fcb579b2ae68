#include "actgraph/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_map>

#include "actgraph/error.hpp"

namespace actgraph {

std::size_t MatchingGraph::assignment_count() const {
  std::size_t n = 0;
  for (const auto& [_, list] : assignments) n += list.size();
  return n;
}

std::size_t MatchingGraph::link_count() const {
  std::size_t n = 0;
  for (const auto& [_, list] : links) n += list.size();
  return n;
}

std::optional<std::size_t> MatchingGraph::find(const std::string& node, std::size_t obs_index) const {
  auto it = assignments.find(node);
  if (it == assignments.end()) return std::nullopt;
  const auto& list = it->second;
  auto pos = std::lower_bound(list.begin(), list.end(), obs_index,
                              [](const Assignment& a, std::size_t v) { return a.obs_index < v; });
  if (pos == list.end() || pos->obs_index != obs_index) return std::nullopt;
  return static_cast<std::size_t>(pos - list.begin());
}

namespace {

// Tree edge joining child to its parent, with orientation relative to the
// query edge's (a, b).
struct TreeLink {
  std::size_t edge = 0;
  bool parent_is_a = true;
};

std::map<std::string, TreeLink> tree_links(const ActivityGraph& graph, const SpanningTree& tree) {
  std::map<std::string, TreeLink> out;
  for (const auto& [child, parent] : tree.parent) {
    bool found = false;
    for (std::size_t e : tree.tree_edges) {
      const auto& edge = graph.edges[e];
      if (edge.a == parent && edge.b == child) {
        out[child] = {e, true};
        found = true;
        break;
      }
      if (edge.b == parent && edge.a == child) {
        out[child] = {e, false};
        found = true;
        break;
      }
    }
    if (!found) throw ValidationError({"tree edge missing for node " + child});
  }
  return out;
}

std::map<std::string, std::vector<std::string>> tree_children(const std::vector<std::string>& order,
                                                               const SpanningTree& tree) {
  std::map<std::string, std::vector<std::string>> children;
  for (const auto& id : order) {
    children[id];
    auto it = tree.parent.find(id);
    if (it != tree.parent.end()) children[it->second].push_back(id);
  }
  return children;
}

}  // namespace

MatchingGraph build_matching_graph(const ActivityGraph& graph, const SpanningTree& tree, const ArchiveStore& store,
                                   const ThresholdAssignment& taus, const CalibrationModel& models,
                                   const EdgeContext& context) {
  MatchingGraph H;
  H.order = tree_order(graph, tree);
  const auto links_of = tree_links(graph, tree);
  const auto observations = store.observations();

  auto node_candidates = [&](const std::string& id) {
    NodeScorer scorer(graph.node(id), models);
    const double tau = taus.node_tau.at(id);
    std::vector<Assignment> out;
    for (std::size_t i = 0; i < observations.size(); ++i) {
      if (scorer.probability(observations[i]) >= tau)
        out.push_back({i, scorer.log_probability(observations[i])});
    }
    return out;
  };

  H.assignments[H.order.front()] = node_candidates(H.order.front());

  for (std::size_t pos = 1; pos < H.order.size(); ++pos) {
    const std::string& child = H.order[pos];
    const std::string& parent = tree.parent.at(child);
    const TreeLink tl = links_of.at(child);
    const QueryEdge& edge = graph.edges[tl.edge];
    EdgeScorer scorer(edge.relationships, models, context);
    const double tau = taus.edge_tau.at(tl.edge);

    const auto candidates = node_candidates(child);
    const auto& parents = H.assignments.at(parent);
    std::vector<Link> raw;
    std::vector<char> used(candidates.size(), 0);
    for (std::size_t p = 0; p < parents.size(); ++p) {
      const Observation& po = observations[parents[p].obs_index];
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        const Observation& co = observations[candidates[c].obs_index];
        const Observation& a = tl.parent_is_a ? po : co;
        const Observation& b = tl.parent_is_a ? co : po;
        if (scorer.probability(a, b) >= tau) {
          raw.push_back({p, c, scorer.log_probability(a, b)});
          used[c] = 1;
        }
      }
    }
    std::vector<std::size_t> remap(candidates.size(), 0);
    auto& kept = H.assignments[child];
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (!used[c]) continue;
      remap[c] = kept.size();
      kept.push_back(candidates[c]);
    }
    for (auto& l : raw) l.child = remap[l.child];
    H.links[child] = std::move(raw);
  }
  return H;
}

namespace {

struct Choice {
  std::size_t child_assignment = 0;
  std::size_t child_rank = 0;
};

struct Partial {
  double score = 0.0;
  std::vector<Choice> choices;  // one per tree child, in child order
};

}  // namespace

std::vector<RootGrounding> optimize_groundings(const ActivityGraph& graph, const SpanningTree& tree,
                                               const MatchingGraph& H, const ArchiveStore& store,
                                               std::size_t top_r, MatchDiagnostics* diag) {
  if (top_r == 0) top_r = 1;
  const auto children = tree_children(H.order, tree);
  const auto observations = store.observations();

  // best[node][assignment] -> up to top_r partial solutions, best first
  std::map<std::string, std::vector<std::vector<Partial>>> best;

  for (auto it = H.order.rbegin(); it != H.order.rend(); ++it) {
    const std::string& u = *it;
    const auto& assigns = H.assignments.at(u);
    auto& table = best[u];
    table.assign(assigns.size(), {});

    // Per child: link ranges grouped by parent assignment.
    struct ChildView {
      const std::vector<Link>* links;
      const std::vector<std::vector<Partial>>* solutions;
      const std::vector<Assignment>* assigns;
      std::vector<std::size_t> begin;
    };
    std::vector<ChildView> views;
    for (const auto& c : children.at(u)) {
      ChildView v{&H.links.at(c), &best.at(c), &H.assignments.at(c), std::vector<std::size_t>(assigns.size() + 1, 0)};
      for (const auto& l : *v.links) ++v.begin[l.parent + 1];
      for (std::size_t i = 0; i < assigns.size(); ++i) v.begin[i + 1] += v.begin[i];
      views.push_back(std::move(v));
    }

    for (std::size_t i = 0; i < assigns.size(); ++i) {
      std::vector<Partial> current{{assigns[i].node_log_prob, {}}};
      for (const auto& v : views) {
        struct Option {
          double score;
          Choice choice;
          double time;
          ObsId id;
        };
        std::vector<Option> options;
        for (std::size_t li = v.begin[i]; li < v.begin[i + 1]; ++li) {
          const Link& l = (*v.links)[li];
          const auto& sols = (*v.solutions)[l.child];
          const Observation& co = observations[(*v.assigns)[l.child].obs_index];
          for (std::size_t r = 0; r < sols.size(); ++r)
            options.push_back({l.edge_log_prob + sols[r].score, {l.child, r}, co.time, co.obs_id});
        }
        std::stable_sort(options.begin(), options.end(), [](const Option& a, const Option& b) {
          if (a.score != b.score) return a.score > b.score;
          if (a.time != b.time) return a.time < b.time;
          if (a.id != b.id) return a.id < b.id;
          return a.choice.child_rank < b.choice.child_rank;
        });
        if (options.size() > top_r) options.resize(top_r);

        std::vector<Partial> next;
        for (const auto& p : current) {
          for (const auto& o : options) {
            Partial q = p;
            q.score += o.score;
            q.choices.push_back(o.choice);
            next.push_back(std::move(q));
          }
        }
        std::stable_sort(next.begin(), next.end(),
                         [](const Partial& a, const Partial& b) { return a.score > b.score; });
        if (next.size() > top_r) next.resize(top_r);
        current = std::move(next);
        if (current.empty()) break;
      }
      table[i] = std::move(current);
    }
  }

  std::vector<RootGrounding> out;
  const std::string& root = H.order.front();
  const auto& root_assigns = H.assignments.at(root);
  std::size_t infeasible = 0;

  std::function<void(const std::string&, std::size_t, std::size_t, std::vector<ObsId>&)> fill =
      [&](const std::string& u, std::size_t a, std::size_t r, std::vector<ObsId>& mapping) {
        const auto& p = best.at(u)[a][r];
        mapping[*graph.node_index(u)] = observations[H.assignments.at(u)[a].obs_index].obs_id;
        const auto& kids = children.at(u);
        for (std::size_t c = 0; c < kids.size(); ++c) fill(kids[c], p.choices[c].child_assignment, p.choices[c].child_rank, mapping);
      };

  for (std::size_t a = 0; a < root_assigns.size(); ++a) {
    const auto& sols = best.at(root)[a];
    if (sols.empty()) {
      ++infeasible;
      continue;
    }
    for (std::size_t r = 0; r < sols.size(); ++r) {
      Grounding g;
      g.mapping.assign(graph.nodes.size(), 0);
      fill(root, a, r, g.mapping);
      g.tree_log_score = sols[r].score;
      g.full_log_score = sols[r].score;
      g.volume = spatio_temporal_volume(store, g.mapping);
      out.push_back({a, std::move(g)});
    }
  }
  if (diag) {
    diag->assignments = H.assignment_count();
    diag->links = H.link_count();
    diag->root_assignments = root_assigns.size();
    diag->infeasible_roots = infeasible;
    diag->tree_candidates = out.size();
  }
  return out;
}

std::vector<Grounding> rescore_full_graph(const std::vector<Grounding>& candidates, const ActivityGraph& graph,
                                          const SpanningTree& tree, const ThresholdAssignment& taus,
                                          const CalibrationModel& models, const ArchiveStore& store,
                                          const EdgeContext& context, MatchDiagnostics* diag) {
  struct Extra {
    std::size_t a, b, edge;
    EdgeScorer scorer;
  };
  std::vector<Extra> extras;
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    if (std::binary_search(tree.tree_edges.begin(), tree.tree_edges.end(), e)) continue;
    const auto& edge = graph.edges[e];
    extras.push_back({*graph.node_index(edge.a), *graph.node_index(edge.b), e,
                      EdgeScorer(edge.relationships, models, context)});
  }
  std::vector<Grounding> out;
  std::size_t rejected = 0;
  for (const auto& g : candidates) {
    Grounding s = g;
    s.full_log_score = g.tree_log_score;
    bool ok = true;
    for (const auto& x : extras) {
      const Observation& a = store.by_id(g.mapping[x.a]);
      const Observation& b = store.by_id(g.mapping[x.b]);
      if (x.scorer.probability(a, b) < taus.edge_tau.at(x.edge)) {
        ok = false;
        break;
      }
      s.full_log_score += x.scorer.log_probability(a, b);
    }
    if (ok)
      out.push_back(std::move(s));
    else
      ++rejected;
  }
  if (diag) diag->non_tree_rejections = rejected;
  return out;
}

bool ranks_before(const Grounding& a, const Grounding& b) {
  if (a.full_log_score != b.full_log_score) return a.full_log_score > b.full_log_score;
  if (a.volume.t_start != b.volume.t_start) return a.volume.t_start < b.volume.t_start;
  return a.mapping < b.mapping;
}

void sort_ranked(std::vector<Grounding>& groundings) {
  std::stable_sort(groundings.begin(), groundings.end(), ranks_before);
}

std::vector<Grounding> deduplicate(const std::vector<Grounding>& ranked) {
  std::vector<Grounding> kept;
  for (const auto& g : ranked) {
    bool dup = false;
    for (const auto& k : kept) {
      if (volume_iou(g.volume, k.volume) > kDuplicateIoU) {
        dup = true;
        break;
      }
    }
    if (!dup) kept.push_back(g);
  }
  return kept;
}

RetrievalResult retrieve(const ActivityGraph& graph, const ArchiveStore& store, const ModelBundle& bundle,
                         const RelFreqTable& freqs, const RetrievalOptions& options) {
  if (auto v = validate(graph); !v.empty()) throw ValidationError(v);
  if (options.k == 0) throw ConfigError("k must be positive");
  if (!(options.decay > 0.0 && options.decay < 1.0)) throw ConfigError("decay must be in (0, 1)");
  if (options.max_rounds < 0) throw ConfigError("max_rounds must be non-negative");

  RetrievalResult result;
  result.tree = hpst(graph, freqs);
  const TrackFeatureTable tracks = build_track_features(store);
  const EdgeContext context{&tracks, options.reid};
  ThresholdAssignment taus = select_thresholds(graph, bundle.stats, options.eta);

  std::vector<Grounding> survivors;
  for (int round = 0;; ++round) {
    MatchDiagnostics diag;
    survivors.clear();
    if (!store.empty()) {
      const MatchingGraph H = build_matching_graph(graph, result.tree, store, taus, bundle.models, context);
      std::vector<Grounding> tree_best;
      for (auto& rg : optimize_groundings(graph, result.tree, H, store, options.top_r, &diag))
        tree_best.push_back(std::move(rg.grounding));
      survivors = rescore_full_graph(tree_best, graph, result.tree, taus, bundle.models, store, context, &diag);
    }
    result.diagnostics = diag;
    result.thresholds_used = taus;
    result.refinement_rounds = round;
    if (!survivors.empty() || !options.refinement || round >= options.max_rounds) break;
    taus = relax(taus, options.decay);
  }

  sort_ranked(survivors);
  auto unique = deduplicate(survivors);
  result.diagnostics.duplicates_suppressed = survivors.size() - unique.size();
  if (unique.size() > options.k) unique.resize(options.k);
  result.ranked = std::move(unique);
  return result;
}

FactorBreakdown explain(const Grounding& grounding, const ActivityGraph& graph, const CalibrationModel& models,
                        const ArchiveStore& store, const EdgeContext& context) {
  FactorBreakdown out;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const double lp = NodeScorer(graph.nodes[i], models).log_probability(store.by_id(grounding.mapping[i]));
    out.node_log.emplace_back(graph.nodes[i].id, lp);
    out.total += lp;
  }
  for (const auto& edge : graph.edges) {
    const Observation& a = store.by_id(grounding.mapping[*graph.node_index(edge.a)]);
    const Observation& b = store.by_id(grounding.mapping[*graph.node_index(edge.b)]);
    const double lp = EdgeScorer(edge.relationships, models, context).log_probability(a, b);
    out.edge_log.push_back(lp);
    out.total += lp;
  }
  return out;
}

json to_json(const Volume& v) {
  return json{{"x", v.x}, {"y", v.y}, {"w", v.w}, {"h", v.h}, {"t_start", v.t_start}, {"t_end", v.t_end}};
}

Volume volume_from_json(const json& j) {
  try {
    return Volume{j.at("x").get<double>(),       j.at("y").get<double>(),     j.at("w").get<double>(),
                  j.at("h").get<double>(),       j.at("t_start").get<double>(), j.at("t_end").get<double>()};
  } catch (const json::exception& e) {
    throw ParseError(std::string("volume: ") + e.what());
  }
}

json to_json(const ThresholdAssignment& taus, const ActivityGraph& graph) {
  json nodes = json::object();
  for (const auto& [id, tau] : taus.node_tau) nodes[id] = tau;
  json edges = json::array();
  for (std::size_t e = 0; e < graph.edges.size() && e < taus.edge_tau.size(); ++e)
    edges.push_back({{"a", graph.edges[e].a}, {"b", graph.edges[e].b}, {"tau", taus.edge_tau[e]}});
  return json{{"eta", taus.eta}, {"nodes", nodes}, {"edges", edges}};
}

json to_json(const SpanningTree& tree, const ActivityGraph& graph) {
  json edges = json::array();
  for (std::size_t e : tree.tree_edges) edges.push_back({graph.edges[e].a, graph.edges[e].b});
  return json{{"root", tree.root}, {"edges", edges}, {"total_weight", tree.total_weight}};
}

json to_json(const RetrievalResult& result, const ActivityGraph& graph) {
  json ranked = json::array();
  for (std::size_t r = 0; r < result.ranked.size(); ++r) {
    const auto& g = result.ranked[r];
    json mapping = json::object();
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) mapping[graph.nodes[i].id] = g.mapping[i];
    ranked.push_back({{"rank", r + 1},
                      {"full_log_score", g.full_log_score},
                      {"tree_log_score", g.tree_log_score},
                      {"mapping", mapping},
                      {"volume", to_json(g.volume)},
                      {"refinement_rounds", result.refinement_rounds}});
  }
  const auto& d = result.diagnostics;
  return json{{"ranked", ranked},
              {"refinement_rounds", result.refinement_rounds},
              {"thresholds", to_json(result.thresholds_used, graph)},
              {"tree", to_json(result.tree, graph)},
              {"diagnostics",
               {{"assignments", d.assignments},
                {"links", d.links},
                {"root_assignments", d.root_assignments},
                {"infeasible_roots", d.infeasible_roots},
                {"tree_candidates", d.tree_candidates},
                {"non_tree_rejections", d.non_tree_rejections},
                {"duplicates_suppressed", d.duplicates_suppressed}}}};
}

}  // namespace actgraph
