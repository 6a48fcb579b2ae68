#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "actgraph/error.hpp"
#include "actgraph/synthlab.hpp"

namespace actgraph {

void NoiseParams::validate() const {
  auto rate = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must be in [0, 1]");
  };
  rate(miss_rate, "miss_rate");
  rate(track_break_rate, "track_break_rate");
  if (!(margin_noise_sigma >= 0.0) || !std::isfinite(margin_noise_sigma))
    throw ConfigError("margin_noise_sigma must be >= 0");
}

void SynthConfig::validate() const {
  if (!(width > 0 && height > 0 && duration > 0) || !std::isfinite(width) || !std::isfinite(height) ||
      !std::isfinite(duration))
    throw ConfigError("scene extent and duration must be positive");
  for (const auto& p : planted) template_graph(p.template_name);
  noise.validate();
}

// ---- templates -----------------------------------------------------------------

const std::vector<std::string>& template_names() {
  static const std::vector<std::string> names{"object_deposit", "person_mount", "car_following", "group_meeting"};
  return names;
}

ActivityGraph template_graph(const std::string& name) {
  using R = Relationship;
  const auto P = ObjectClass::person, O = ObjectClass::object, V = ObjectClass::vehicle;
  ActivityGraph g;
  if (name == "object_deposit") {
    g.nodes = {{"carrier", P, {}}, {"item", O, {"appearing"}}, {"item_gone", O, {"disappearing"}}, {"vehicle", V, {}}};
    g.edges = {{"carrier", "item", {R::near}},
               {"item", "item_gone", {R::same_entity, R::later}},
               {"item_gone", "vehicle", {R::near}},
               {"carrier", "vehicle", {R::later}}};
  } else if (name == "person_mount") {
    g.nodes = {{"walker", P, {"appearing"}}, {"boarder", P, {"disappearing"}}, {"car", V, {"speed:stationary"}}};
    g.edges = {{"walker", "boarder", {R::same_entity, R::later}},
               {"boarder", "car", {R::near}},
               {"walker", "car", {R::not_near}}};
  } else if (name == "car_following") {
    g.nodes = {{"lead", V, {"appearing"}},
               {"follower", V, {"appearing"}},
               {"lead_stopped", V, {"disappearing", "speed:stationary"}}};
    g.edges = {{"lead", "follower", {R::near}},
               {"lead", "lead_stopped", {R::same_entity, R::later}},
               {"follower", "lead_stopped", {R::later}}};
  } else if (name == "group_meeting") {
    g.nodes = {{"arrival", P, {"appearing"}},
               {"guest", P, {}},
               {"host", P, {"speed:stationary"}},
               {"host2", P, {"speed:stationary"}}};
    g.edges = {{"arrival", "guest", {R::same_entity, R::later}},
               {"guest", "host", {R::near}},
               {"guest", "host2", {R::near}},
               {"host", "host2", {R::near}}};
  } else {
    throw ConfigError("unknown template '" + name + "'");
  }
  return g;
}

namespace {

struct Keyframe {
  double t, x, y;
};

// An entity moves piecewise-linearly between keyframes and is observed on
// every frame from the first keyframe to the last.
struct Entity {
  ObjectClass cls = ObjectClass::person;
  double scale = 1.0;
  std::vector<Keyframe> path;

  double t_start() const { return path.front().t; }
  double t_end() const { return path.back().t; }

  std::size_t segment(double t) const {
    for (std::size_t k = 0; k + 1 < path.size(); ++k)
      if (t < path[k + 1].t) return k;
    return path.size() >= 2 ? path.size() - 2 : 0;
  }
  std::pair<double, double> position(double t) const {
    if (path.size() == 1) return {path[0].x, path[0].y};
    const auto& a = path[segment(t)];
    const auto& b = path[segment(t) + 1];
    const double u = b.t > a.t ? std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0) : 0.0;
    return {a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)};
  }
  double speed(double t) const {
    if (path.size() == 1) return 0.0;
    const auto& a = path[segment(t)];
    const auto& b = path[segment(t) + 1];
    return b.t > a.t ? std::hypot(b.x - a.x, b.y - a.y) / (b.t - a.t) : 0.0;
  }
};

constexpr double kStationarySpeed = 0.5;  // px/s
// "appearing" / "disappearing" hold within this many seconds of a track's ends.
constexpr double kEventWindow = 4.0;

std::pair<double, double> base_size(ObjectClass c) {
  switch (c) {
    case ObjectClass::person:
      return {20.0, 50.0};
    case ObjectClass::object:
      return {15.0, 15.0};
    case ObjectClass::vehicle:
      return {80.0, 40.0};
  }
  return {20.0, 20.0};
}

double frame_floor(double t) { return std::floor(t / kFramePeriod) * kFramePeriod; }
double frame_round(double t) { return std::round(t / kFramePeriod) * kFramePeriod; }

// (node id, entity slot, time)
struct NodeBinding {
  std::string node;
  std::size_t entity;
  double time;
};

struct PlantedInstance {
  std::string template_name;
  std::vector<Entity> entities;
  std::vector<NodeBinding> bindings;
};

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Builds one instance around anchor (ax, ay) starting at frame t0, heading theta.
PlantedInstance script(const std::string& name, double ax, double ay, double t0, double theta, Rng& rng) {
  const double ux = std::cos(theta), uy = std::sin(theta);
  const double nx = -uy, ny = ux;
  auto at = [&](double along, double across) { return std::pair{ax + along * ux + across * nx, ay + along * uy + across * ny}; };
  auto kf = [](double t, std::pair<double, double> p) { return Keyframe{t, p.first, p.second}; };
  auto scale = [&] { return uniform(rng, 0.8, 1.25); };

  PlantedInstance inst;
  inst.template_name = name;
  if (name == "object_deposit") {
    // Person picks up an object, carries it to a parked vehicle, where the
    // object disappears.
    const double d = uniform(rng, 200.0, 350.0);
    const double t1 = t0 + frame_round((d - 28.0) / 4.0);
    const double phi = uniform(rng, 0.0, 2 * std::numbers::pi);
    const auto pickup = at(-d, 0.0);
    const auto drop = at(-28.0, 0.0);
    Entity person{ObjectClass::person, scale(), {}};
    person.path = {Keyframe{t0 - 20.0, pickup.first + 12 * nx + 100 * std::cos(phi), pickup.second + 12 * ny + 100 * std::sin(phi)},
                   kf(t0, at(-d, 12.0)), kf(t1, at(-28.0, 12.0)), kf(t1 + 20.0, at(-28.0, 92.0))};
    Entity item{ObjectClass::object, scale(), {kf(t0, pickup), kf(t1, drop)}};
    Entity vehicle{ObjectClass::vehicle, scale(), {kf(t0 - 30.0, at(0, 0)), kf(t1 + 30.0, at(0, 0))}};
    inst.entities = {person, item, vehicle};
    inst.bindings = {{"carrier", 0, t0}, {"item", 1, t0}, {"item_gone", 1, t1}, {"vehicle", 2, t1}};
  } else if (name == "person_mount") {
    // Person walks up to a parked vehicle and disappears next to it.
    const double d = uniform(rng, 300.0, 450.0);
    const double t1 = t0 + frame_round((d - 35.0) / 5.0);
    Entity person{ObjectClass::person, scale(), {kf(t0, at(-d, 0.0)), kf(t1, at(-35.0, 0.0))}};
    Entity car{ObjectClass::vehicle, scale(), {kf(t0 - 20.0, at(0, 0)), kf(t1 + 20.0, at(0, 0))}};
    inst.entities = {person, car};
    inst.bindings = {{"walker", 0, t0}, {"boarder", 0, t1}, {"car", 1, t1}};
  } else if (name == "car_following") {
    // Two vehicles enter together; the lead stops and disappears, the
    // follower turns away.
    const double drive = frame_round(uniform(rng, 60.0, 100.0));
    const double ts = t0 + drive;
    const double t1 = ts + 10.0;
    const double run = 10.0 * drive;
    Entity lead{ObjectClass::vehicle, scale(), {kf(t0, at(0, 0)), kf(ts, at(run, 0)), kf(t1, at(run, 0))}};
    Entity follower{ObjectClass::vehicle, scale(),
                    {kf(t0, at(-35.0, 0)), kf(ts, at(run - 35.0, 0)), kf(ts + 30.0, at(run - 35.0, 300.0))}};
    inst.entities = {lead, follower};
    inst.bindings = {{"lead", 0, t0}, {"follower", 1, t0}, {"lead_stopped", 0, t1}};
  } else if (name == "group_meeting") {
    // Two people wait; a third arrives and joins them.
    const double d = uniform(rng, 250.0, 400.0);
    const double t1 = t0 + frame_round((d - 15.0) / 5.0);
    Entity guest{ObjectClass::person, scale(), {kf(t0, at(-d, 0.0)), kf(t1, at(-15.0, 0.0)), kf(t1 + 10.0, at(-15.0, 0.0))}};
    Entity host{ObjectClass::person, scale(), {kf(t1 - 40.0, at(0, -18.0)), kf(t1 + 12.0, at(0, -18.0))}};
    Entity host2{ObjectClass::person, scale(), {kf(t1 - 40.0, at(0, 18.0)), kf(t1 + 12.0, at(0, 18.0))}};
    inst.entities = {guest, host, host2};
    inst.bindings = {{"arrival", 0, t0}, {"guest", 0, t1}, {"host", 1, t1}, {"host2", 2, t1}};
  } else {
    throw ConfigError("unknown template '" + name + "'");
  }
  return inst;
}

struct Region {
  double x0, y0, x1, y1, t0, t1;
  bool overlaps(const Region& o) const {
    return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1 && t0 < o.t1 && o.t0 < t1;
  }
};

Region region_of(const PlantedInstance& inst) {
  Region r{1e300, 1e300, -1e300, -1e300, 1e300, -1e300};
  for (const auto& e : inst.entities) {
    for (const auto& k : e.path) {
      r.x0 = std::min(r.x0, k.x - 100);
      r.y0 = std::min(r.y0, k.y - 100);
      r.x1 = std::max(r.x1, k.x + 100);
      r.y1 = std::max(r.y1, k.y + 100);
      r.t0 = std::min(r.t0, k.t - 10);
      r.t1 = std::max(r.t1, k.t + 10);
    }
  }
  return r;
}

bool inside(const PlantedInstance& inst, const SynthConfig& cfg) {
  for (const auto& e : inst.entities) {
    for (const auto& k : e.path) {
      if (k.x < 20 || k.y < 20 || k.x > cfg.width - 20 || k.y > cfg.height - 20) return false;
      if (k.t < 0 || k.t > cfg.duration) return false;
    }
  }
  return true;
}

Entity clutter_entity(const SynthConfig& cfg, Rng& rng) {
  Entity e;
  const double r = uniform(rng, 0.0, 1.0);
  e.cls = r < 0.4 ? ObjectClass::person : (r < 0.65 ? ObjectClass::object : ObjectClass::vehicle);
  e.scale = uniform(rng, 0.8, 1.25);
  const double life = std::min(frame_round(uniform(rng, 20.0, 120.0)), frame_floor(cfg.duration));
  const double start = frame_floor(uniform(rng, 0.0, std::max(0.0, cfg.duration - life)));
  const int segments = std::uniform_int_distribution<int>(1, 3)(rng);
  double x = uniform(rng, 20.0, std::max(20.0, cfg.width - 20.0));
  double y = uniform(rng, 20.0, std::max(20.0, cfg.height - 20.0));
  e.path.push_back({start, x, y});
  for (int s = 0; s < segments; ++s) {
    const double t_next = s + 1 == segments ? start + life : frame_round(start + life * (s + 1) / segments);
    const double dt = t_next - e.path.back().t;
    if (dt <= 0) continue;
    double speed = 0.0;
    const double m = uniform(rng, 0.0, 1.0);
    switch (e.cls) {
      case ObjectClass::person:
        speed = m < 0.25 ? 0.0 : uniform(rng, 0.5, 5.0);
        break;
      case ObjectClass::vehicle:
        speed = m < 0.25 ? 0.0 : uniform(rng, 2.0, 15.0);
        break;
      case ObjectClass::object:
        speed = m < 0.8 ? 0.0 : uniform(rng, 0.5, 3.0);
        break;
    }
    const double heading = uniform(rng, 0.0, 2 * std::numbers::pi);
    x = std::clamp(x + std::cos(heading) * speed * dt, 20.0, std::max(20.0, cfg.width - 20.0));
    y = std::clamp(y + std::sin(heading) * speed * dt, 20.0, std::max(20.0, cfg.height - 20.0));
    e.path.push_back({t_next, x, y});
  }
  return e;
}

}  // namespace

SynthArchive generate_archive(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);

  std::vector<Entity> entities;
  std::vector<std::pair<std::string, std::vector<NodeBinding>>> planted;  // bindings use global entity slots
  std::vector<Region> taken;

  for (const auto& spec : config.planted) {
    for (std::size_t n = 0; n < spec.count; ++n) {
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        const double ax = uniform(rng, 0.0, config.width);
        const double ay = uniform(rng, 0.0, config.height);
        const double t0 = frame_floor(uniform(rng, 60.0, std::max(60.0, config.duration - 60.0)));
        const double theta = uniform(rng, 0.0, 2 * std::numbers::pi);
        PlantedInstance inst = script(spec.template_name, ax, ay, t0, theta, rng);
        if (!inside(inst, config)) continue;
        const Region reg = region_of(inst);
        if (std::any_of(taken.begin(), taken.end(), [&](const Region& r) { return r.overlaps(reg); })) continue;
        taken.push_back(reg);
        const std::size_t base = entities.size();
        for (auto& b : inst.bindings) b.entity += base;
        for (auto& e : inst.entities) entities.push_back(std::move(e));
        planted.emplace_back(inst.template_name, std::move(inst.bindings));
        placed = true;
      }
      if (!placed)
        throw InfeasibleError("cannot place " + spec.template_name + " instance " + std::to_string(n + 1) +
                              " without overlap; enlarge the scene or duration");
    }
  }
  for (std::size_t c = 0; c < config.n_clutter; ++c) entities.push_back(clutter_entity(config, rng));

  // Frames of every entity, numbered in (time, entity) order.
  struct Frame {
    double t;
    std::size_t entity;
    bool appearing, disappearing;
  };
  std::vector<Frame> frames;
  for (std::size_t e = 0; e < entities.size(); ++e) {
    const double t0 = entities[e].t_start(), t1 = entities[e].t_end();
    for (double t = t0; t <= t1 + 1e-9; t += kFramePeriod)
      frames.push_back({t, e, t - t0 <= kEventWindow + 1e-9, t1 - t <= kEventWindow + 1e-9});
  }
  std::stable_sort(frames.begin(), frames.end(), [](const Frame& a, const Frame& b) {
    if (a.t != b.t) return a.t < b.t;
    return a.entity < b.entity;
  });

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Observation> observations;
  observations.reserve(frames.size());
  SynthLabels labels;
  std::map<std::pair<std::size_t, double>, ObsId> frame_id;
  ObsId next_id = 1;
  for (const auto& f : frames) {
    const Entity& e = entities[f.entity];
    const auto [cx, cy] = e.position(f.t);
    const auto [bw, bh] = base_size(e.cls);
    Observation o;
    o.obs_id = next_id++;
    o.track_id = static_cast<TrackId>(f.entity) + 1;
    o.time = f.t;
    o.box = Box{cx - bw * e.scale / 2, cy - bh * e.scale / 2, bw * e.scale, bh * e.scale};

    ObsLabel label{static_cast<std::int64_t>(f.entity) + 1, e.cls, {}};
    if (f.appearing) label.attributes.insert("appearing");
    if (f.disappearing) label.attributes.insert("disappearing");
    label.attributes.insert(e.speed(f.t) < kStationarySpeed ? "speed:stationary" : "speed:moving");
    label.attributes.insert(e.scale >= 1.0 ? "size:large" : "size:small");

    for (auto c : all_classes()) o.class_margins[std::string(to_string(c))] = (c == e.cls ? 2.0 : -2.0) + gauss(rng);
    for (const auto& a : attribute_vocabulary())
      o.attr_margins[a] = (label.attributes.count(a) ? 2.0 : -2.0) + gauss(rng);

    frame_id[{f.entity, f.t}] = o.obs_id;
    labels.emplace(o.obs_id, std::move(label));
    observations.push_back(std::move(o));
  }

  SynthArchive out;
  out.store = ArchiveStore(std::move(observations));
  for (const auto& [name, bindings] : planted) {
    const ActivityGraph graph = template_graph(name);
    GroundTruthInstance gt;
    gt.template_name = name;
    std::vector<ObsId> ids;
    for (const auto& b : bindings) {
      // The bound frame first, then the other frames where the node's
      // appearing/disappearing attribute also holds.
      const auto& attrs = graph.node(b.node).attributes;
      const double lo = attrs.count("disappearing") ? -kEventWindow : 0.0;
      const double hi = attrs.count("appearing") ? kEventWindow : 0.0;
      auto& list = gt.mapping[b.node];
      const double t = frame_round(b.time);
      list.push_back(frame_id.at({b.entity, t}));
      for (double u = t + lo; u <= t + hi + 1e-9; u += kFramePeriod) {
        auto it = frame_id.find({b.entity, u});
        if (u != t && it != frame_id.end()) list.push_back(it->second);
      }
      ids.insert(ids.end(), list.begin(), list.end());
    }
    gt.volume = spatio_temporal_volume(out.store, ids);
    out.truth.push_back(std::move(gt));
  }
  out.labels = std::move(labels);

  if (!config.noise.is_off()) {
    out.store = inject_noise(out.store, config.noise, config.seed ^ 0x9e3779b97f4a7c15ULL);
    out.labels = restrict_labels(out.labels, out.store);
  }
  return out;
}

ArchiveStore inject_noise(const ArchiveStore& store, const NoiseParams& noise, std::uint64_t seed) {
  noise.validate();
  if (noise.is_off()) return store;

  Rng miss_rng(seed), break_rng(seed + 1), margin_rng(seed + 2);
  std::bernoulli_distribution miss(noise.miss_rate);
  std::vector<Observation> kept;
  for (const auto& o : store.observations())
    if (!(noise.miss_rate > 0.0 && miss(miss_rng))) kept.push_back(o);

  if (noise.track_break_rate > 0.0 && !kept.empty()) {
    const ArchiveStore survivors(kept);
    TrackId next_track = 0;
    for (const auto& tr : survivors.tracklets()) next_track = std::max(next_track, tr.track_id);
    std::unordered_map<ObsId, TrackId> retrack;
    std::bernoulli_distribution brk(noise.track_break_rate);
    for (const auto& tr : survivors.tracklets()) {
      if (!brk(break_rng) || tr.observations.size() < 2) continue;
      const std::size_t at =
          std::uniform_int_distribution<std::size_t>(1, tr.observations.size() - 1)(break_rng);
      ++next_track;
      for (std::size_t i = at; i < tr.observations.size(); ++i) retrack[tr.observations[i]] = next_track;
    }
    for (auto& o : kept)
      if (auto it = retrack.find(o.obs_id); it != retrack.end()) o.track_id = it->second;
  }

  if (noise.margin_noise_sigma > 0.0) {
    std::normal_distribution<double> gauss(0.0, noise.margin_noise_sigma);
    for (auto& o : kept) {
      for (auto& [_, m] : o.class_margins) m += gauss(margin_rng);
      for (auto& [_, m] : o.attr_margins) m += gauss(margin_rng);
    }
  }
  return ArchiveStore(std::move(kept));
}

SynthLabels restrict_labels(const SynthLabels& labels, const ArchiveStore& store) {
  SynthLabels out;
  for (const auto& o : store.observations())
    if (auto it = labels.find(o.obs_id); it != labels.end()) out.emplace(it->first, it->second);
  return out;
}

// ---- serialization -------------------------------------------------------------

json to_json(const SynthConfig& config) {
  json planted = json::array();
  for (const auto& p : config.planted) planted.push_back({{"template", p.template_name}, {"count", p.count}});
  return json{{"width", config.width},
              {"height", config.height},
              {"duration", config.duration},
              {"n_clutter", config.n_clutter},
              {"planted", planted},
              {"noise",
               {{"miss_rate", config.noise.miss_rate},
                {"track_break_rate", config.noise.track_break_rate},
                {"margin_noise_sigma", config.noise.margin_noise_sigma}}},
              {"seed", config.seed}};
}

SynthConfig synth_config_from_json(const json& doc) {
  try {
    SynthConfig c;
    c.width = doc.value("width", c.width);
    c.height = doc.value("height", c.height);
    c.duration = doc.value("duration", c.duration);
    c.n_clutter = doc.value("n_clutter", c.n_clutter);
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("planted"))
      for (const auto& p : doc.at("planted"))
        c.planted.push_back({p.at("template").get<std::string>(), p.at("count").get<std::size_t>()});
    if (doc.contains("noise")) {
      const auto& n = doc.at("noise");
      c.noise.miss_rate = n.value("miss_rate", 0.0);
      c.noise.track_break_rate = n.value("track_break_rate", 0.0);
      c.noise.margin_noise_sigma = n.value("margin_noise_sigma", 0.0);
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("synth config: ") + e.what());
  }
}

json truth_to_json(std::span<const GroundTruthInstance> truth, const SynthConfig& config) {
  json instances = json::array();
  for (const auto& t : truth) {
    json mapping = json::object();
    for (const auto& [node, ids] : t.mapping) mapping[node] = ids;
    instances.push_back({{"template", t.template_name}, {"mapping", mapping}, {"volume", to_json(t.volume)}});
  }
  return json{{"config", to_json(config)}, {"seed", config.seed}, {"instances", instances}};
}

std::vector<GroundTruthInstance> truth_from_json(const json& doc) {
  try {
    const json& list = doc.is_array() ? doc : doc.at("instances");
    std::vector<GroundTruthInstance> out;
    for (const auto& j : list) {
      GroundTruthInstance t;
      t.template_name = j.value("template", std::string{});
      for (const auto& [node, ids] : j.at("mapping").items()) t.mapping[node] = ids.get<std::vector<ObsId>>();
      t.volume = volume_from_json(j.at("volume"));
      out.push_back(std::move(t));
    }
    return out;
  } catch (const json::exception& e) {
    throw ParseError(std::string("truth: ") + e.what());
  }
}

std::string export_labels(const SynthLabels& labels) {
  std::string out;
  for (const auto& [id, l] : labels) {
    json j{{"obs_id", id}, {"entity", l.entity}, {"class", std::string(to_string(l.cls))}, {"attributes", l.attributes}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

SynthLabels parse_labels(std::string_view jsonl) {
  SynthLabels out;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ObsLabel l;
      l.entity = j.at("entity").get<std::int64_t>();
      l.cls = parse_object_class(j.at("class").get<std::string>());
      for (const auto& a : j.at("attributes")) l.attributes.insert(canonical_attribute(a.get<std::string>()));
      out[j.at("obs_id").get<ObsId>()] = std::move(l);
    } catch (const json::exception& e) {
      throw ParseError("labels line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace actgraph
