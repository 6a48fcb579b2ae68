#include "actgraph/model_bundle.hpp"

#include "actgraph/error.hpp"

namespace actgraph {

namespace {

json platt_json(const PlattParams& p) { return {{"s", p.s}, {"t", p.t}}; }
PlattParams platt_from(const json& j) { return {j.at("s").get<double>(), j.at("t").get<double>()}; }

json concept_json(const LinearConcept& c) {
  return {{"weights", c.weights}, {"bias", c.bias}, {"platt", platt_json(c.platt)}, {"features", c.feature_spec}};
}

LinearConcept concept_from(const std::string& name, const json& j) {
  LinearConcept c;
  c.name = name;
  c.weights = j.at("weights").get<std::vector<double>>();
  c.bias = j.at("bias").get<double>();
  c.platt = platt_from(j.at("platt"));
  c.feature_spec = j.at("features").get<std::vector<std::string>>();
  if (c.weights.size() != c.feature_spec.size())
    throw ConfigError("concept " + name + ": weights and features differ in length");
  if (!(c.platt.s != 0.0)) throw ConfigError("concept " + name + ": Platt slope must be non-zero");
  return c;
}

json concept_table(const std::map<std::string, LinearConcept>& table) {
  json out = json::object();
  for (const auto& [name, c] : table) out[name] = concept_json(c);
  return out;
}

std::map<std::string, LinearConcept> concept_table_from(const json& j) {
  std::map<std::string, LinearConcept> out;
  for (const auto& [name, v] : j.items()) out.emplace(name, concept_from(name, v));
  return out;
}

json histogram_json(const Histogram& h) {
  json sparse = json::array();
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    if (h.counts[i]) sparse.push_back({i, h.counts[i]});
  return {{"bins", h.counts.size()}, {"counts", sparse}};
}

Histogram histogram_from(const json& j) {
  Histogram h(j.at("bins").get<std::size_t>());
  for (const auto& kv : j.at("counts")) {
    const auto bin = kv.at(0).get<std::size_t>();
    if (bin >= h.bins()) throw ConfigError("histogram bin out of range");
    h.counts[bin] = kv.at(1).get<std::uint64_t>();
  }
  return h;
}

}  // namespace

json to_json(const CalibrationModel& m) {
  json W = json::array();
  for (Eigen::Index i = 0; i < m.reid.W.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.reid.W.cols(); ++j) row.push_back(m.reid.W(i, j));
    W.push_back(row);
  }
  return {{"classes", concept_table(m.class_models)},
          {"attributes", concept_table(m.attr_models)},
          {"relationships", concept_table(m.rel_models)},
          {"reid", {{"W", W}, {"platt", platt_json(m.reid.platt)}, {"features", tracklet_feature_names()}}},
          {"later", {{"gap_min", m.later.gap_min}, {"gap_max", m.later.gap_max}, {"p_satisfied", m.later.p_satisfied}}}};
}

CalibrationModel calibration_model_from_json(const json& j) {
  CalibrationModel m;
  m.class_models = concept_table_from(j.at("classes"));
  m.attr_models = concept_table_from(j.at("attributes"));
  m.rel_models = concept_table_from(j.at("relationships"));
  const auto& reid = j.at("reid");
  if (reid.at("features").get<std::vector<std::string>>() != tracklet_feature_names())
    throw ConfigError("re-id model was trained on a different tracklet feature layout");
  const auto& W = reid.at("W");
  const auto d = static_cast<Eigen::Index>(W.size());
  m.reid.W.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (static_cast<Eigen::Index>(W[i].size()) != d) throw ConfigError("re-id W must be square");
    for (Eigen::Index k = 0; k < d; ++k) m.reid.W(i, k) = W[i][k].get<double>();
  }
  m.reid.platt = platt_from(reid.at("platt"));
  const auto& later = j.at("later");
  m.later = {later.at("gap_min").get<double>(), later.at("gap_max").get<double>(),
             later.at("p_satisfied").get<double>()};
  m.check_covers_vocabulary();
  return m;
}

json to_json(const ScoreStats& stats) {
  json out = json::object();
  for (const auto& [key, s] : stats.concepts)
    out[key] = {{"positive", histogram_json(s.positive)},
                {"background", histogram_json(s.background)},
                {"positive_missing", s.positive_missing}};
  return out;
}

ScoreStats score_stats_from_json(const json& j) {
  ScoreStats stats;
  for (const auto& [key, v] : j.items()) {
    ConceptStats s;
    s.positive = histogram_from(v.at("positive"));
    s.background = histogram_from(v.at("background"));
    s.positive_missing = v.value("positive_missing", std::uint64_t{0});
    stats.concepts.emplace(key, std::move(s));
  }
  return stats;
}

json to_json(const RelFreqTable& f) {
  return {{"freq", f.freq}, {"sample_size", f.sample_size}, {"seed", f.seed}, {"scope", "global"}};
}

RelFreqTable rel_freq_table_from_json(const json& j) {
  RelFreqTable f;
  f.freq = j.at("freq").get<std::map<std::string, double>>();
  f.sample_size = j.at("sample_size").get<std::size_t>();
  f.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& [name, v] : f.freq) {
    parse_relationship(name);
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError("relationship frequency for " + name + " outside (0, 1]");
  }
  return f;
}

std::string serialize_model_bundle(const ModelBundle& bundle) {
  json doc = {{"version", bundle.version}, {"models", to_json(bundle.models)}, {"stats", to_json(bundle.stats)}};
  return doc.dump() + "\n";
}

ModelBundle parse_model_bundle(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& ex) {
    throw ParseError("model bundle syntax error at byte " + std::to_string(ex.byte));
  }
  try {
    if (!doc.contains("version")) throw ParseError("model bundle has no version field");
    ModelBundle b;
    b.version = doc["version"].get<int>();
    if (b.version != kModelBundleVersion)
      throw ConfigError("unsupported model bundle version " + std::to_string(b.version));
    b.models = calibration_model_from_json(doc.at("models"));
    b.stats = score_stats_from_json(doc.at("stats"));
    return b;
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed model bundle: ") + ex.what());
  }
}

ModelBundle load_model_bundle(const std::string& path) { return parse_model_bundle(read_text_file(path)); }

}  // namespace actgraph
