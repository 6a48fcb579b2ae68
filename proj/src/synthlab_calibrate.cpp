#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include "actgraph/error.hpp"
#include "actgraph/synthlab.hpp"

namespace actgraph {

namespace {

using Rng = std::mt19937_64;
using Pair = std::pair<std::size_t, std::size_t>;

// "near" ground truth for training: close together at (almost) the same time.
constexpr double kNearDistance = 50.0;
constexpr double kNearTimeGap = 2.0;
constexpr double kFarDistance = 200.0;
constexpr double kStaleTimeGap = 4.0;

double center_distance(const Observation& a, const Observation& b) {
  return std::hypot(a.box.cx() - b.box.cx(), a.box.cy() - b.box.cy());
}

template <class T>
std::vector<T> capped(std::vector<T> items, std::size_t cap, Rng& rng) {
  if (items.size() > cap) {
    std::shuffle(items.begin(), items.end(), rng);
    items.resize(cap);
  }
  return items;
}

std::vector<RelationshipExample> examples(std::span<const Observation> obs, const std::vector<Pair>& pairs, int label) {
  std::vector<RelationshipExample> out;
  out.reserve(pairs.size());
  for (const auto& [i, j] : pairs) out.push_back({obs[i], obs[j], label});
  return out;
}

LinearConcept fit_margin_concept(const std::string& name, bool is_class, std::span<const Observation> obs,
                                 const std::vector<const ObsLabel*>& labels) {
  std::vector<double> margins;
  std::vector<int> y;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& table = is_class ? obs[i].class_margins : obs[i].attr_margins;
    auto it = table.find(name);
    if (it == table.end()) continue;
    margins.push_back(it->second);
    y.push_back(is_class ? labels[i]->cls == parse_object_class(name) : labels[i]->attributes.count(name) > 0);
  }
  try {
    return margin_concept(name, is_class, fit_platt(margins, y));
  } catch (const DegenerateError& e) {
    throw DegenerateError("cannot calibrate '" + name + "': " + e.what());
  }
}

}  // namespace

ModelBundle calibrate_models(const ArchiveStore& store, const SynthLabels& labels, const CalibrationOptions& options) {
  const auto obs = store.observations();
  if (obs.size() < 10) throw DegenerateError("calibration needs at least 10 observations");
  std::vector<const ObsLabel*> lab(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    auto it = labels.find(obs[i].obs_id);
    if (it == labels.end()) throw DataError("no label for observation " + std::to_string(obs[i].obs_id));
    lab[i] = &it->second;
  }

  ModelBundle bundle;
  CalibrationModel& m = bundle.models;
  for (auto c : all_classes()) {
    const std::string name(to_string(c));
    m.class_models[name] = fit_margin_concept(name, true, obs, lab);
  }
  for (const auto& a : attribute_vocabulary()) m.attr_models[a] = fit_margin_concept(a, false, obs, lab);

  Rng rng(options.seed);

  // Pair pools. "near" is about two different entities, so pairs within one
  // entity are left out of its training data.
  std::vector<Pair> near_pos, far_cotemporal, stale;
  const auto span = store.time_span();
  const auto by_time = store.indices_in_window(span->first, span->second);
  for (std::size_t p = 0; p < by_time.size(); ++p) {
    const std::size_t i = by_time[p];
    for (std::size_t q = p + 1; q < by_time.size(); ++q) {
      const std::size_t j = by_time[q];
      if (obs[j].time - obs[i].time > kNearTimeGap) break;
      if (lab[i]->entity == lab[j]->entity) continue;
      const double d = center_distance(obs[i], obs[j]);
      if (d < kNearDistance) {
        near_pos.emplace_back(i, j);
        near_pos.emplace_back(j, i);
      } else if (d > kFarDistance) {
        far_cotemporal.emplace_back(i, j);
        far_cotemporal.emplace_back(j, i);
      }
    }
  }
  // Same place, different time: a near pair with one side moved along its
  // own track.
  for (const auto& [i, j] : near_pos) {
    const Tracklet& tr = store.tracklet(obs[j].track_id);
    for (ObsId other : tr.observations) {
      const std::size_t k = *store.index_of(other);
      const double gap = std::abs(obs[k].time - obs[i].time);
      if (gap < kStaleTimeGap || gap > 60.0) continue;
      if (center_distance(obs[i], obs[k]) < kNearDistance) stale.emplace_back(i, k);
    }
  }
  std::vector<Pair> random_pairs;
  random_pairs.reserve(options.pair_samples);
  std::uniform_int_distribution<std::size_t> pick(0, obs.size() - 1);
  while (random_pairs.size() < options.pair_samples) {
    const std::size_t i = pick(rng), j = pick(rng);
    if (i != j) random_pairs.emplace_back(i, j);
  }
  std::vector<Pair> random_far, random_close, random_not_near_truth;
  for (const auto& [i, j] : random_pairs) {
    const double d = center_distance(obs[i], obs[j]);
    const double gap = std::abs(obs[j].time - obs[i].time);
    if (d > kFarDistance) random_far.emplace_back(i, j);
    if (d < kNearDistance) random_close.emplace_back(i, j);
    if (d > kFarDistance || gap >= kStaleTimeGap) random_not_near_truth.emplace_back(i, j);
  }
  if (near_pos.empty()) throw DegenerateError("calibration archive has no near pairs");

  {
    auto pos = examples(obs, capped(near_pos, 6000, rng), 1);
    for (auto* pool : {&random_not_near_truth, &far_cotemporal, &stale}) {
      auto neg = examples(obs, capped(*pool, pool == &random_not_near_truth ? 6000 : 3000, rng), 0);
      pos.insert(pos.end(), neg.begin(), neg.end());
    }
    m.rel_models["near"] = train_relationship("near", pos, options.train);
  }
  {
    auto pos = examples(obs, capped(random_far, 6000, rng), 1);
    std::vector<Pair> close = capped(near_pos, 3000, rng);
    for (const auto& p : capped(random_close, 3000, rng)) close.push_back(p);
    for (const auto& p : capped(stale, 3000, rng)) close.push_back(p);
    auto neg = examples(obs, close, 0);
    pos.insert(pos.end(), neg.begin(), neg.end());
    m.rel_models["not_near"] = train_relationship("not_near", pos, options.train);
  }

  // Re-identification: consecutive pieces of one entity against later
  // tracklets of other entities.
  const TrackFeatureTable tracks = build_track_features(store);
  const auto& tracklets = store.tracklets();
  std::vector<std::int64_t> entity(tracklets.size());
  for (std::size_t t = 0; t < tracklets.size(); ++t) entity[t] = lab[*store.index_of(tracklets[t].observations.front())]->entity;
  std::vector<std::size_t> by_start(tracklets.size());
  for (std::size_t t = 0; t < by_start.size(); ++t) by_start[t] = t;
  std::stable_sort(by_start.begin(), by_start.end(),
                   [&](std::size_t a, std::size_t b) { return tracklets[a].t_start < tracklets[b].t_start; });

  std::vector<ReIdExample> reid_examples;
  auto features = [&](std::size_t t) -> const std::vector<double>& { return tracks.at(tracklets[t].track_id).features; };
  std::map<std::int64_t, std::vector<std::size_t>> pieces;
  for (std::size_t t : by_start) pieces[entity[t]].push_back(t);
  for (const auto& [_, list] : pieces)
    for (std::size_t k = 0; k + 1 < list.size(); ++k) reid_examples.push_back({features(list[k]), features(list[k + 1]), 1});
  for (std::size_t a = 0; a < tracklets.size(); ++a) {
    auto first_later = std::lower_bound(by_start.begin(), by_start.end(), tracklets[a].t_end,
                                        [&](std::size_t t, double v) { return tracklets[t].t_start < v; });
    std::size_t hard = 0;
    for (auto it = first_later; it != by_start.end() && hard < 3; ++it) {
      if (entity[*it] == entity[a]) continue;
      reid_examples.push_back({features(a), features(*it), 0});
      ++hard;
    }
    const auto remaining = static_cast<std::size_t>(by_start.end() - first_later);
    for (int r = 0; r < 2 && remaining > 0; ++r) {
      const std::size_t b = *(first_later + std::uniform_int_distribution<std::size_t>(0, remaining - 1)(rng));
      if (entity[b] != entity[a]) reid_examples.push_back({features(a), features(b), 0});
    }
  }
  m.reid = train_reid(reid_examples, options.train);

  // Score statistics.
  ScoreStats& stats = bundle.stats;
  for (auto c : all_classes()) {
    const std::string name(to_string(c));
    const LinearConcept& model = m.class_models.at(name);
    ConceptStats& cs = stats.concepts[class_key(c)];
    for (std::size_t i = 0; i < obs.size(); ++i) {
      auto it = obs[i].class_margins.find(name);
      if (it == obs[i].class_margins.end()) {
        if (lab[i]->cls == c) ++cs.positive_missing;
        continue;
      }
      const double p = model.probability(std::span<const double>(&it->second, 1));
      if (lab[i]->cls == c) cs.positive.add(p);
      cs.background.add(p);
    }
  }
  for (const auto& a : attribute_vocabulary()) {
    const LinearConcept& model = m.attr_models.at(a);
    ConceptStats& cs = stats.concepts[attribute_key(a)];
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const bool truth = lab[i]->attributes.count(a) > 0;
      auto it = obs[i].attr_margins.find(a);
      if (it == obs[i].attr_margins.end()) {
        if (truth) ++cs.positive_missing;
        continue;
      }
      const double p = model.probability(std::span<const double>(&it->second, 1));
      if (truth) cs.positive.add(p);
      cs.background.add(p);
    }
  }

  const EdgeContext context{&tracks, true};
  auto rel_stats = [&](Relationship r, const std::vector<Pair>& positives) {
    const EdgeScorer scorer({r}, m, context);
    ConceptStats& cs = stats.concepts[relationship_key(r)];
    for (const auto& [i, j] : positives) cs.positive.add(scorer.probability(obs[i], obs[j]));
    for (const auto& [i, j] : random_pairs) cs.background.add(scorer.probability(obs[i], obs[j]));
  };
  rel_stats(Relationship::near, near_pos);
  rel_stats(Relationship::not_near, random_far);

  std::map<std::int64_t, std::vector<std::size_t>> members;  // by entity, time order
  for (std::size_t i = 0; i < obs.size(); ++i) members[lab[i]->entity].push_back(i);
  std::vector<Pair> same_entity;
  for (auto& [_, list] : members) {
    if (list.size() < 2) continue;
    std::stable_sort(list.begin(), list.end(), [&](std::size_t a, std::size_t b) { return obs[a].time < obs[b].time; });
    same_entity.emplace_back(list.front(), list.back());
    std::uniform_int_distribution<std::size_t> any(0, list.size() - 1);
    for (int k = 0; k < 5; ++k) {
      std::size_t a = any(rng), b = any(rng);
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      same_entity.emplace_back(list[a], list[b]);
    }
  }
  rel_stats(Relationship::same_entity, same_entity);

  std::vector<Pair> later_pos;
  for (const auto& [i, j] : random_pairs) {
    const double gap = obs[j].time - obs[i].time;
    if (gap >= m.later.gap_min && gap <= m.later.gap_max) later_pos.emplace_back(i, j);
  }
  rel_stats(Relationship::later, later_pos);
  return bundle;
}

SynthConfig default_training_config(std::uint64_t seed) {
  SynthConfig c;
  c.n_clutter = 400;
  for (const auto& name : template_names()) c.planted.push_back({name, 6});
  c.noise.track_break_rate = 0.5;
  c.seed = seed;
  return c;
}

ModelBundle calibrate_synthetic(std::uint64_t seed) {
  const SynthArchive training = generate_archive(default_training_config(seed));
  CalibrationOptions options;
  options.seed = seed;
  return calibrate_models(training.store, training.labels, options);
}

// ---- oracle ----------------------------------------------------------------------

Grounding brute_force_ground(const ActivityGraph& graph, const ArchiveStore& store, const CalibrationModel& models,
                             const EdgeContext& context) {
  if (auto v = validate(graph); !v.empty()) throw ValidationError(v);
  const std::size_t n = store.size();
  const std::size_t m = graph.nodes.size();
  if (n == 0) throw DataError("brute force on an empty archive");
  const double mappings = std::pow(static_cast<double>(n), static_cast<double>(m));
  if (mappings > kMaxBruteForceMappings)
    throw RefusalError("brute force over " + std::to_string(n) + "^" + std::to_string(m) + " mappings refused");

  const auto obs = store.observations();
  std::vector<std::vector<double>> node_log(m, std::vector<double>(n));
  for (std::size_t k = 0; k < m; ++k) {
    NodeScorer scorer(graph.nodes[k], models);
    for (std::size_t i = 0; i < n; ++i) node_log[k][i] = scorer.log_probability(obs[i]);
  }
  struct EdgeTable {
    std::size_t a, b;
    EdgeScorer scorer;
    std::vector<double> log;  // n*n, empty if computed on demand
  };
  std::vector<EdgeTable> edges;
  for (const auto& e : graph.edges) {
    EdgeTable t{*graph.node_index(e.a), *graph.node_index(e.b), EdgeScorer(e.relationships, models, context), {}};
    if (n * n <= 4'000'000) {
      t.log.resize(n * n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) t.log[i * n + j] = t.scorer.log_probability(obs[i], obs[j]);
    }
    edges.push_back(std::move(t));
  }

  std::vector<std::size_t> idx(m, 0);
  Grounding best;
  bool have = false;
  auto make = [&](double score) {
    Grounding g;
    g.mapping.resize(m);
    for (std::size_t k = 0; k < m; ++k) g.mapping[k] = obs[idx[k]].obs_id;
    g.full_log_score = g.tree_log_score = score;
    g.volume = spatio_temporal_volume(store, g.mapping);
    return g;
  };
  while (true) {
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k) s += node_log[k][idx[k]];
    for (const auto& e : edges)
      s += e.log.empty() ? e.scorer.log_probability(obs[idx[e.a]], obs[idx[e.b]]) : e.log[idx[e.a] * n + idx[e.b]];
    if (!have || s > best.full_log_score) {
      best = make(s);
      have = true;
    } else if (s == best.full_log_score) {
      Grounding g = make(s);
      if (ranks_before(g, best)) best = std::move(g);
    }
    std::size_t k = 0;
    while (k < m && ++idx[k] == n) idx[k++] = 0;
    if (k == m) break;
  }
  return best;
}

bool instance_passes(const GroundTruthInstance& instance, const ActivityGraph& graph, const ThresholdAssignment& taus,
                     const CalibrationModel& models, const ArchiveStore& store, const EdgeContext& context) {
  std::map<std::string, const Observation*> bound;
  for (const auto& node : graph.nodes) {
    auto it = instance.mapping.find(node.id);
    if (it == instance.mapping.end() || it->second.empty()) return false;
    auto index = store.index_of(it->second.front());
    if (!index) return false;
    const Observation& o = store.at(*index);
    if (NodeScorer(node, models).probability(o) < taus.node_tau.at(node.id)) return false;
    bound[node.id] = &o;
  }
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    const auto& edge = graph.edges[e];
    const double p = EdgeScorer(edge.relationships, models, context).probability(*bound.at(edge.a), *bound.at(edge.b));
    if (p < taus.edge_tau.at(e)) return false;
  }
  return true;
}

}  // namespace actgraph
