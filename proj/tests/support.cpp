#include "support.hpp"

#include <algorithm>
#include <numeric>

#include "actgraph/json_io.hpp"
#include "actgraph/synthlab.hpp"

namespace testsupport {

std::string fixture_path(const std::string& name) { return std::string(ACTGRAPH_FIXTURE_DIR) + "/" + name; }

std::string fixture_text(const std::string& name) { return read_text_file(fixture_path(name)); }

const ModelBundle& calibrated_bundle() {
  static const ModelBundle bundle = calibrate_synthetic(1);
  return bundle;
}

Observation make_obs(ObsId id, TrackId track, double t, Box box, std::map<std::string, double> class_margins,
                     std::map<std::string, double> attr_margins) {
  Observation o;
  o.obs_id = id;
  o.track_id = track;
  o.time = t;
  o.box = box;
  o.class_margins = std::move(class_margins);
  o.attr_margins = std::move(attr_margins);
  return o;
}

Observation labelled_obs(ObsId id, TrackId track, double t, Box box, ObjectClass cls,
                         const std::vector<std::string>& attributes) {
  std::map<std::string, double> cm, am;
  for (auto c : all_classes()) cm[std::string(to_string(c))] = c == cls ? 2.0 : -2.0;
  for (const auto& a : attribute_vocabulary())
    am[a] = std::find(attributes.begin(), attributes.end(), a) != attributes.end() ? 2.0 : -2.0;
  return make_obs(id, track, t, box, cm, am);
}

CalibrationModel toy_models() {
  CalibrationModel m;
  const PlattParams identity{-1.0, 0.0};
  for (auto c : all_classes()) {
    const std::string name(to_string(c));
    m.class_models[name] = margin_concept(name, true, identity);
  }
  for (const auto& a : attribute_vocabulary()) m.attr_models[a] = margin_concept(a, false, identity);

  LinearConcept near;
  near.name = "near";
  near.feature_spec = pair_feature_names();
  near.weights.assign(kPairFeatureCount, 0.0);
  near.weights[1] = -0.05;
  near.bias = 2.5;
  near.platt = identity;
  LinearConcept not_near = near;
  not_near.name = "not_near";
  not_near.weights[1] = 0.05;
  not_near.bias = -5.0;
  m.rel_models["near"] = near;
  m.rel_models["not_near"] = not_near;

  const auto d = static_cast<Eigen::Index>(tracklet_feature_names().size());
  m.reid.W = Eigen::MatrixXd::Zero(d, d);
  m.reid.platt = identity;
  return m;
}

ConceptStats stats_from(const std::vector<double>& positives, const std::vector<double>& background) {
  ConceptStats s;
  for (double p : positives) s.positive.add(p);
  for (double p : background) s.background.add(p);
  return s;
}

ModelBundle toy_bundle() {
  ModelBundle b;
  b.models = toy_models();
  std::vector<double> pos, bg;
  for (int i = 0; i < 400; ++i) {
    pos.push_back(0.6 + 0.001 * i);
    bg.push_back(0.001 * i);
  }
  const ConceptStats s = stats_from(pos, bg);
  for (auto c : all_classes()) b.stats.concepts[class_key(c)] = s;
  for (const auto& a : attribute_vocabulary()) b.stats.concepts[attribute_key(a)] = s;
  for (auto r : all_relationships()) b.stats.concepts[relationship_key(r)] = s;
  return b;
}

ArchiveStore random_archive(std::mt19937_64& rng, std::size_t n_obs) {
  std::uniform_real_distribution<double> pos(0.0, 200.0), start(0.0, 30.0), vel(-4.0, 4.0), size(15.0, 45.0);
  std::uniform_int_distribution<int> cls_pick(0, 2), len_pick(1, 6), coin(0, 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Observation> out;
  TrackId track = 1;
  while (out.size() < n_obs) {
    const auto cls = all_classes()[static_cast<std::size_t>(cls_pick(rng))];
    const int len = std::min<int>(len_pick(rng), static_cast<int>(n_obs - out.size()));
    double x = pos(rng), y = pos(rng);
    const double vx = vel(rng), vy = vel(rng), w = size(rng), h = size(rng);
    const double t0 = 2.0 * std::floor(start(rng) / 2.0);
    std::vector<std::string> attrs;
    for (const auto& a : attribute_vocabulary())
      if (coin(rng)) attrs.push_back(a);
    for (int i = 0; i < len; ++i) {
      const double t = t0 + 2.0 * i;
      Observation o = labelled_obs(static_cast<ObsId>(out.size() + 1), track, t, {x, y, w, h}, cls, attrs);
      for (auto& [_, m] : o.class_margins) m += noise(rng);
      for (auto& [_, m] : o.attr_margins) m += noise(rng);
      out.push_back(std::move(o));
      x += 2.0 * vx;
      y += 2.0 * vy;
    }
    ++track;
  }
  return ArchiveStore(std::move(out));
}

namespace {

RelationSet random_relationships(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(1, 15);
  for (;;) {
    const int mask = pick(rng);
    RelationSet rels;
    for (std::size_t i = 0; i < all_relationships().size(); ++i)
      if (mask & (1 << i)) rels.insert(all_relationships()[i]);
    if (!(rels.count(Relationship::near) && rels.count(Relationship::not_near))) return rels;
  }
}

ActivityGraph random_graph(std::mt19937_64& rng, std::size_t n, double extra_edge_rate, bool with_attributes) {
  std::uniform_int_distribution<int> cls_pick(0, 2), coin(0, 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ActivityGraph g;
  for (std::size_t i = 0; i < n; ++i) {
    QueryNode node;
    node.id = "n" + std::to_string(i);
    node.cls = all_classes()[static_cast<std::size_t>(cls_pick(rng))];
    if (with_attributes)
      for (const auto& a : attribute_vocabulary()) {
        bool base_taken = false;
        for (const auto& have : node.attributes) base_taken |= attribute_base(have) == attribute_base(a);
        if (!base_taken && coin(rng) == 0) node.attributes.insert(a);
      }
    g.nodes.push_back(std::move(node));
  }
  std::vector<std::vector<bool>> linked(n, std::vector<bool>(n, false));
  auto add_edge = [&](std::size_t i, std::size_t j) {
    linked[i][j] = linked[j][i] = true;
    if (u(rng) < 0.5) std::swap(i, j);
    g.edges.push_back({g.nodes[i].id, g.nodes[j].id, random_relationships(rng)});
  };
  for (std::size_t i = 1; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> parent(0, i - 1);
    add_edge(parent(rng), i);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (!linked[i][j] && u(rng) < extra_edge_rate) add_edge(i, j);
  return g;
}

}  // namespace

ActivityGraph random_query(std::mt19937_64& rng, std::size_t max_nodes, double extra_edge_rate) {
  std::uniform_int_distribution<std::size_t> size(1, max_nodes);
  return random_graph(rng, size(rng), extra_edge_rate, true);
}

ActivityGraph random_connected_graph(std::mt19937_64& rng, std::size_t n, double edge_rate) {
  return random_graph(rng, n, edge_rate, false);
}

}  // namespace testsupport
