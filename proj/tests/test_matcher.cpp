#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "actgraph/error.hpp"
#include "actgraph/matcher.hpp"
#include "actgraph/synthlab.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace actgraph;
using namespace testsupport;

namespace {

double logit(double p) { return std::log(p / (1 - p)); }

// Person/vehicle observation with the given class probability under the
// identity Platt map; centre at (cx, 100).
Observation toy_obs(ObsId id, TrackId track, double t, double cx, ObjectClass cls, double p) {
  Observation o = labelled_obs(id, track, t, {cx - 10, 90, 20, 20}, cls);
  o.class_margins[std::string(to_string(cls))] = logit(p);
  return o;
}

QueryNode node(const std::string& id, ObjectClass cls) { return QueryNode{id, cls, {}}; }

ActivityGraph person_near_car() {
  ActivityGraph g;
  g.nodes = {node("car", ObjectClass::vehicle), node("person", ObjectClass::person)};
  g.edges = {{"person", "car", {Relationship::near}}};
  return g;
}

ThresholdAssignment flat_taus(const ActivityGraph& g, double node_tau, double edge_tau) {
  ThresholdAssignment t;
  for (const auto& n : g.nodes) t.node_tau[n.id] = node_tau;
  t.edge_tau.assign(g.edges.size(), edge_tau);
  return t;
}

Grounding with_volume(double x0, double x1, double score, std::vector<ObsId> mapping = {1}) {
  Grounding g;
  g.mapping = std::move(mapping);
  g.full_log_score = g.tree_log_score = score;
  g.volume = Volume{x0, 0, x1 - x0, 10, 0, 4};
  return g;
}

}  // namespace

TEST_CASE("matching graph prunes children without a passing parent") {
  const ActivityGraph g = person_near_car();
  // p1 is 10 px from v1, p2 is 200 px away.
  const ArchiveStore store({toy_obs(1, 1, 0, 100, ObjectClass::person, 0.88),
                            toy_obs(2, 2, 0, 290, ObjectClass::person, 0.88),
                            toy_obs(3, 3, 0, 90, ObjectClass::vehicle, 0.88)});
  const CalibrationModel models = toy_models();
  const SpanningTree tree = hpst(g, {});
  REQUIRE(tree.root == "car");
  const MatchingGraph H = build_matching_graph(g, tree, store, flat_taus(g, 0.5, 0.5), models);
  CHECK(H.order == std::vector<std::string>{"car", "person"});
  REQUIRE(H.assignments.at("car").size() == 1);
  CHECK(H.assignments.at("car")[0].obs_index == 2);
  REQUIRE(H.assignments.at("person").size() == 1);
  CHECK(H.assignments.at("person")[0].obs_index == 0);
  CHECK(H.link_count() == 1);
  CHECK_FALSE(H.find("person", 1).has_value());

  SUBCASE("zero thresholds link everything") {
    const MatchingGraph all = build_matching_graph(g, tree, store, flat_taus(g, 0.0, 0.0), models);
    CHECK(all.assignments.at("car").size() == 3);
    CHECK(all.assignments.at("person").size() == 3);
    CHECK(all.link_count() == 9);
  }
  SUBCASE("no root candidate gives an empty graph") {
    const ArchiveStore people({toy_obs(1, 1, 0, 100, ObjectClass::person, 0.88)});
    const MatchingGraph none = build_matching_graph(g, tree, people, flat_taus(g, 0.5, 0.5), models);
    CHECK(none.empty());
    CHECK(none.link_count() == 0);
    CHECK(optimize_groundings(g, tree, none, people).empty());
  }
}

TEST_CASE("two-node tree objective") {
  const ActivityGraph g = person_near_car();
  // Root 0.9, child 0.8, near at 50 px = 0.5.
  const ArchiveStore store(
      {toy_obs(1, 1, 0, 150, ObjectClass::person, 0.8), toy_obs(2, 2, 0, 100, ObjectClass::vehicle, 0.9)});
  const SpanningTree tree = hpst(g, {});
  const MatchingGraph H = build_matching_graph(g, tree, store, flat_taus(g, 0.3, 0.3), toy_models());
  const auto best = optimize_groundings(g, tree, H, store);
  REQUIRE(best.size() == 1);
  CHECK(best[0].grounding.tree_log_score == doctest::Approx(std::log(0.36)).epsilon(1e-12));
  CHECK(best[0].grounding.mapping == std::vector<ObsId>{2, 1});
}

TEST_CASE("three-node chain equals the exhaustive optimum") {
  ActivityGraph g;
  g.nodes = {node("a", ObjectClass::person), node("b", ObjectClass::person), node("c", ObjectClass::vehicle)};
  g.edges = {{"a", "b", {Relationship::near}}, {"b", "c", {Relationship::near}}};
  std::vector<Observation> obs{toy_obs(1, 1, 0, 100, ObjectClass::person, 0.9),
                               toy_obs(2, 2, 0, 120, ObjectClass::person, 0.7),
                               toy_obs(3, 3, 0, 140, ObjectClass::vehicle, 0.8)};
  const ArchiveStore store(obs);
  const SpanningTree tree = hpst(g, {});
  const ThresholdAssignment taus = flat_taus(g, 0.6, 0.5);
  const MatchingGraph H = build_matching_graph(g, tree, store, taus, toy_models());
  const auto t = factor_tables(g, store, toy_models(), {});
  const auto oracle = tree_optimum_per_root(g, tree, t, taus);
  const auto got = optimize_groundings(g, tree, H, store, 1);
  REQUIRE(got.size() == oracle.size());
  for (const auto& rg : got) {
    const std::size_t root_obs = H.assignments.at(tree.root)[rg.root_assignment].obs_index;
    CHECK(rg.grounding.tree_log_score == doctest::Approx(oracle.at(root_obs)).epsilon(1e-12));
  }
}

TEST_CASE("dynamic program equals the exhaustive tree optimum per root") {
  std::mt19937_64 rng(2024);
  const CalibrationModel models = toy_models();
  std::uniform_real_distribution<double> tau(0.05, 0.5);
  for (int trial = 0; trial < 60; ++trial) {
    const ArchiveStore store = random_archive(rng, 18);
    const ActivityGraph g = random_query(rng, 3);
    const TrackFeatureTable tracks = build_track_features(store);
    const EdgeContext ctx{&tracks, true};
    const SpanningTree tree = hpst(g, {});
    ThresholdAssignment taus = flat_taus(g, tau(rng), tau(rng));
    const MatchingGraph H = build_matching_graph(g, tree, store, taus, models, ctx);
    const auto t = factor_tables(g, store, models, ctx);
    const auto oracle = tree_optimum_per_root(g, tree, t, taus);
    const auto got = optimize_groundings(g, tree, H, store, 1);
    CAPTURE(trial);
    REQUIRE(got.size() == oracle.size());
    for (const auto& rg : got) {
      const std::size_t root_obs = H.assignments.at(tree.root)[rg.root_assignment].obs_index;
      REQUIRE(oracle.count(root_obs));
      CHECK(std::abs(rg.grounding.tree_log_score - oracle.at(root_obs)) <= 1e-9);
    }

    // Every grounding passing the full graph survives in H.
    for (const auto& m : passing_mappings(g, t, taus)) {
      for (std::size_t i = 0; i < m.size(); ++i) CHECK(H.find(g.nodes[i].id, m[i]).has_value());
      for (const auto& [child, parent] : tree.parent) {
        const auto ci = *H.find(child, m[*g.node_index(child)]);
        const auto pi = *H.find(parent, m[*g.node_index(parent)]);
        const auto& links = H.links.at(child);
        CHECK(std::any_of(links.begin(), links.end(),
                          [&](const Link& l) { return l.child == ci && l.parent == pi; }));
      }
    }

    // Rescoring keeps exactly the fully passing candidates, scored in full.
    std::vector<Grounding> cands;
    for (auto& rg : got) cands.push_back(rg.grounding);
    const auto kept = rescore_full_graph(cands, g, tree, taus, models, store, ctx);
    std::size_t expected_kept = 0;
    for (const auto& c : cands) {
      std::vector<std::size_t> m;
      for (ObsId id : c.mapping) m.push_back(*store.index_of(id));
      bool ok = true;
      for (std::size_t e = 0; e < g.edges.size(); ++e)
        ok &= t.edge_p[e][m[*g.node_index(g.edges[e].a)]][m[*g.node_index(g.edges[e].b)]] >= taus.edge_tau[e];
      if (!ok) continue;
      REQUIRE(expected_kept < kept.size());
      CHECK(kept[expected_kept].mapping == c.mapping);
      CHECK(std::abs(kept[expected_kept].full_log_score - full_log_score(g, t, m)) <= 1e-9);
      ++expected_kept;
    }
    CHECK(kept.size() == expected_kept);
  }
}

TEST_CASE("top-r keeps the best grounding first") {
  std::mt19937_64 rng(31);
  const CalibrationModel models = toy_models();
  for (int trial = 0; trial < 20; ++trial) {
    const ArchiveStore store = random_archive(rng, 16);
    const ActivityGraph g = random_query(rng, 3, 0.0);
    const TrackFeatureTable tracks = build_track_features(store);
    const SpanningTree tree = hpst(g, {});
    const ThresholdAssignment taus = flat_taus(g, 0.1, 0.05);
    const MatchingGraph H = build_matching_graph(g, tree, store, taus, models, {&tracks, true});
    MatchDiagnostics d1, d3;
    const auto one = optimize_groundings(g, tree, H, store, 1, &d1);
    const auto three = optimize_groundings(g, tree, H, store, 3, &d3);
    CHECK(d3.tree_candidates >= d1.tree_candidates);
    for (const auto& best : one) {
      auto it = std::find_if(three.begin(), three.end(),
                             [&](const RootGrounding& r) { return r.root_assignment == best.root_assignment; });
      REQUIRE(it != three.end());
      CHECK(it->grounding.tree_log_score == doctest::Approx(best.grounding.tree_log_score).epsilon(1e-12));
      std::size_t per_root = 0;
      double prev = 0;
      for (const auto& r : three)
        if (r.root_assignment == best.root_assignment) {
          if (per_root++) CHECK(r.grounding.tree_log_score <= prev + 1e-12);
          prev = r.grounding.tree_log_score;
        }
      CHECK(per_root <= 3);
    }
  }
}

TEST_CASE("rescoring rejects a failing non-tree edge") {
  ActivityGraph g;
  g.nodes = {node("A", ObjectClass::person), node("B", ObjectClass::person), node("C", ObjectClass::person)};
  g.edges = {{"A", "B", {Relationship::near}}, {"B", "C", {Relationship::near}}, {"A", "C", {Relationship::near}}};
  const SpanningTree tree = hpst(g, {});
  std::size_t non_tree = 0;
  while (std::count(tree.tree_edges.begin(), tree.tree_edges.end(), non_tree)) ++non_tree;
  const std::string u = g.edges[non_tree].a, v = g.edges[non_tree].b;
  std::string w;
  for (const auto& n : g.nodes)
    if (n.id != u && n.id != v) w = n.id;

  // Centres at 0, 40, 80 and 20 px: near passes at 20 and 40, fails at 80.
  const ArchiveStore store({toy_obs(1, 1, 0, 0, ObjectClass::person, 0.9), toy_obs(2, 2, 0, 40, ObjectClass::person, 0.9),
                            toy_obs(3, 3, 0, 80, ObjectClass::person, 0.9), toy_obs(4, 4, 0, 20, ObjectClass::person, 0.9)});
  const CalibrationModel models = toy_models();
  const auto t = factor_tables(g, store, models, {});
  auto ground = [&](ObsId ou, ObsId ov, ObsId ow) {
    Grounding gr;
    gr.mapping.resize(3);
    gr.mapping[*g.node_index(u)] = ou;
    gr.mapping[*g.node_index(v)] = ov;
    gr.mapping[*g.node_index(w)] = ow;
    gr.volume = spatio_temporal_volume(store, gr.mapping);
    gr.tree_log_score = explain(gr, g, models, store).total - explain(gr, g, models, store).edge_log[non_tree];
    return gr;
  };
  const ThresholdAssignment taus = flat_taus(g, 0.5, 0.5);
  MatchDiagnostics diag;
  const auto kept = rescore_full_graph({ground(1, 3, 2), ground(1, 4, 2)}, g, tree, taus, models, store, {}, &diag);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].mapping == ground(1, 4, 2).mapping);
  CHECK(diag.non_tree_rejections == 1);
  std::vector<std::size_t> m;
  for (ObsId id : kept[0].mapping) m.push_back(*store.index_of(id));
  CHECK(std::abs(kept[0].full_log_score - full_log_score(g, t, m)) <= 1e-9);
  CHECK(std::abs(explain(kept[0], g, models, store).total - kept[0].full_log_score) <= 1e-9);
}

TEST_CASE("a tree query scores the same in full") {
  const ActivityGraph g = person_near_car();
  const ArchiveStore store(
      {toy_obs(1, 1, 0, 150, ObjectClass::person, 0.8), toy_obs(2, 2, 0, 100, ObjectClass::vehicle, 0.9)});
  const SpanningTree tree = hpst(g, {});
  const ThresholdAssignment taus = flat_taus(g, 0.3, 0.3);
  const MatchingGraph H = build_matching_graph(g, tree, store, taus, toy_models());
  auto best = optimize_groundings(g, tree, H, store);
  const auto kept = rescore_full_graph({best[0].grounding}, g, tree, taus, toy_models(), store);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].full_log_score == kept[0].tree_log_score);
}

TEST_CASE("ranking order and tie breaks") {
  Grounding hi = with_volume(0, 10, -1.0, {5});
  Grounding early = with_volume(0, 10, -2.0, {9});
  early.volume.t_start = 0;
  Grounding late = with_volume(0, 10, -2.0, {1});
  late.volume.t_start = 3;
  Grounding lex_a = with_volume(0, 10, -3.0, {2, 7});
  Grounding lex_b = with_volume(0, 10, -3.0, {2, 8});
  std::vector<Grounding> v{lex_b, late, lex_a, early, hi};
  sort_ranked(v);
  CHECK(v[0].mapping == hi.mapping);
  CHECK(v[1].mapping == early.mapping);
  CHECK(v[2].mapping == late.mapping);
  CHECK(v[3].mapping == lex_a.mapping);
  CHECK(v[4].mapping == lex_b.mapping);
  CHECK(ranks_before(hi, early));
  CHECK_FALSE(ranks_before(hi, hi));
}

TEST_CASE("duplicate suppression") {
  SUBCASE("identical volumes keep the first") {
    const auto out = deduplicate({with_volume(0, 10, -1, {1}), with_volume(0, 10, -2, {2})});
    REQUIRE(out.size() == 1);
    CHECK(out[0].mapping == std::vector<ObsId>{1});
  }
  SUBCASE("disjoint volumes both stay") {
    CHECK(deduplicate({with_volume(0, 10, -1), with_volume(20, 30, -2)}).size() == 2);
  }
  SUBCASE("a chain keeps the ends") {
    // IoU(A,B) = IoU(B,C) = 2/3, IoU(A,C) = 3/7.
    const auto a = with_volume(0, 10, -1, {1}), b = with_volume(2, 12, -2, {2}), c = with_volume(4, 14, -3, {3});
    REQUIRE(volume_iou(a.volume, b.volume) > kDuplicateIoU);
    REQUIRE(volume_iou(a.volume, c.volume) < kDuplicateIoU);
    const auto out = deduplicate({a, b, c});
    REQUIRE(out.size() == 2);
    CHECK(out[0].mapping == a.mapping);
    CHECK(out[1].mapping == c.mapping);
  }
}

namespace {

// Five person/vehicle pairs 10 px apart with rising class confidence, plus
// low-confidence clutter.
ArchiveStore planted_pairs(std::mt19937_64& rng) {
  std::vector<Observation> obs;
  ObsId id = 1;
  for (int i = 0; i < 5; ++i) {
    const double x = 200.0 * i + 100, t = 100.0 * i;
    const double p = 0.8 + 0.03 * i;
    obs.push_back(toy_obs(id, id, t, x, ObjectClass::person, p));
    ++id;
    obs.push_back(toy_obs(id, id, t, x + 10, ObjectClass::vehicle, p));
    ++id;
  }
  std::uniform_real_distribution<double> px(0.0, 1000.0), pt(0.0, 500.0);
  for (int i = 0; i < 30; ++i) {
    const auto cls = i % 2 ? ObjectClass::person : ObjectClass::vehicle;
    obs.push_back(toy_obs(id, id, std::round(pt(rng)), px(rng), cls, 0.3));
    ++id;
  }
  return ArchiveStore(obs);
}

}  // namespace

TEST_CASE("retrieval returns the MAP grounding first") {
  std::mt19937_64 rng(8);
  const ArchiveStore store = planted_pairs(rng);
  const ModelBundle bundle = toy_bundle();
  const ActivityGraph g = person_near_car();
  RetrievalOptions opts;
  opts.k = 1;
  const RetrievalResult r = retrieve(g, store, bundle, {}, opts);
  REQUIRE(r.ranked.size() == 1);
  CHECK(r.refinement_rounds == 0);
  const TrackFeatureTable tracks = build_track_features(store);
  const Grounding map = brute_force_ground(g, store, bundle.models, {&tracks, true});
  CHECK(r.ranked[0].mapping == map.mapping);
  CHECK(std::abs(r.ranked[0].full_log_score - map.full_log_score) <= 1e-9);
  CHECK(r.ranked[0].mapping == std::vector<ObsId>{10, 9});

  SUBCASE("all five pairs come back in score order") {
    opts.k = 20;
    const RetrievalResult all = retrieve(g, store, bundle, {}, opts);
    REQUIRE(all.ranked.size() == 5);
    for (std::size_t i = 0; i + 1 < all.ranked.size(); ++i) {
      CHECK(all.ranked[i].full_log_score >= all.ranked[i + 1].full_log_score);
      for (std::size_t j = i + 1; j < all.ranked.size(); ++j)
        CHECK(volume_iou(all.ranked[i].volume, all.ranked[j].volume) <= kDuplicateIoU);
    }
  }
}

TEST_CASE("refinement relaxes thresholds until something passes") {
  const ActivityGraph g = person_near_car();
  // Class probability 0.55 sits below the first-round threshold (~0.61).
  const ArchiveStore store(
      {toy_obs(1, 1, 0, 100, ObjectClass::person, 0.55), toy_obs(2, 2, 0, 110, ObjectClass::vehicle, 0.55)});
  const ModelBundle bundle = toy_bundle();
  RetrievalOptions opts;
  const RetrievalResult r = retrieve(g, store, bundle, {}, opts);
  CHECK(r.refinement_rounds == 1);
  CHECK(r.ranked.size() == 1);
  CHECK(r.thresholds_used.node_tau.at("person") < 0.55);

  opts.refinement = false;
  const RetrievalResult off = retrieve(g, store, bundle, {}, opts);
  CHECK(off.ranked.empty());
  CHECK(off.refinement_rounds == 0);
}

TEST_CASE("relaxed thresholds only grow the matching graph") {
  std::mt19937_64 rng(12);
  const CalibrationModel models = toy_models();
  for (int trial = 0; trial < 30; ++trial) {
    const ArchiveStore store = random_archive(rng, 20);
    const ActivityGraph g = random_query(rng, 3);
    const SpanningTree tree = hpst(g, {});
    const TrackFeatureTable tracks = build_track_features(store);
    const EdgeContext ctx{&tracks, true};
    const ThresholdAssignment strict = flat_taus(g, 0.7, 0.6);
    const MatchingGraph a = build_matching_graph(g, tree, store, strict, models, ctx);
    const MatchingGraph b = build_matching_graph(g, tree, store, relax(strict, 0.5), models, ctx);
    CHECK(b.assignment_count() >= a.assignment_count());
    CHECK(b.link_count() >= a.link_count());
    for (const auto& [nid, list] : a.assignments)
      for (const auto& as : list) CHECK(b.find(nid, as.obs_index).has_value());
  }
}

TEST_CASE("empty archive uses every refinement round") {
  const RetrievalResult r = retrieve(person_near_car(), ArchiveStore{}, toy_bundle(), {});
  CHECK(r.ranked.empty());
  CHECK(r.refinement_rounds == 3);
}

TEST_CASE("retrieval is deterministic and validates options") {
  std::mt19937_64 rng(8);
  const ArchiveStore store = planted_pairs(rng);
  const ModelBundle bundle = toy_bundle();
  const ActivityGraph g = person_near_car();
  const auto a = to_json(retrieve(g, store, bundle, {}), g).dump();
  const auto b = to_json(retrieve(g, store, bundle, {}), g).dump();
  CHECK(a == b);
  RetrievalOptions bad;
  bad.k = 0;
  CHECK_THROWS_AS(retrieve(g, store, bundle, {}, bad), ConfigError);
  bad = {};
  bad.decay = 1.0;
  CHECK_THROWS_AS(retrieve(g, store, bundle, {}, bad), ConfigError);
  ActivityGraph broken = g;
  broken.edges.clear();
  CHECK_THROWS_AS(retrieve(broken, store, bundle, {}), ValidationError);
}
