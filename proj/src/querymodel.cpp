#include "actgraph/querymodel.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "actgraph/error.hpp"
#include "actgraph/json_io.hpp"

namespace actgraph {

namespace {

constexpr std::string_view kClassNames[] = {"person", "object", "vehicle"};
constexpr std::string_view kRelationshipNames[] = {"later", "near", "not_near", "same_entity"};

std::string pair_key(const std::string& a, const std::string& b) {
  return a < b ? a + "\x1f" + b : b + "\x1f" + a;
}

}  // namespace

std::string_view to_string(ObjectClass c) { return kClassNames[static_cast<int>(c)]; }
std::string_view to_string(Relationship r) { return kRelationshipNames[static_cast<int>(r)]; }

ObjectClass parse_object_class(std::string_view token) {
  for (auto c : all_classes())
    if (to_string(c) == token) return c;
  throw VocabularyError(std::string(token), "unknown class");
}

Relationship parse_relationship(std::string_view token) {
  for (auto r : all_relationships())
    if (to_string(r) == token) return r;
  throw VocabularyError(std::string(token), "unknown relationship");
}

const std::vector<ObjectClass>& all_classes() {
  static const std::vector<ObjectClass> v{ObjectClass::person, ObjectClass::object,
                                          ObjectClass::vehicle};
  return v;
}

const std::vector<Relationship>& all_relationships() {
  static const std::vector<Relationship> v{Relationship::later, Relationship::near,
                                           Relationship::not_near, Relationship::same_entity};
  return v;
}

const std::vector<std::string>& attribute_vocabulary() {
  static const std::vector<std::string> v{"appearing",     "disappearing", "size:large",
                                          "size:small",    "speed:moving", "speed:stationary"};
  return v;
}

std::string canonical_attribute(std::string_view token) {
  if (token == "size") return "size:large";
  if (token == "speed") return "speed:moving";
  const auto& vocab = attribute_vocabulary();
  if (std::find(vocab.begin(), vocab.end(), token) == vocab.end())
    throw VocabularyError(std::string(token), "unknown attribute");
  return std::string(token);
}

std::string_view attribute_base(std::string_view attribute) {
  return attribute.substr(0, attribute.find(':'));
}

bool is_symmetric(Relationship r) { return r != Relationship::later; }

std::optional<std::size_t> ActivityGraph::node_index(std::string_view id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id) return i;
  return std::nullopt;
}

const QueryNode& ActivityGraph::node(std::string_view id) const {
  auto i = node_index(id);
  if (!i) throw ConfigError("no query node '" + std::string(id) + "'");
  return nodes[*i];
}

std::vector<std::string> validate(const ActivityGraph& graph) {
  std::vector<std::string> out;
  if (graph.nodes.empty()) out.push_back("empty: graph has no nodes");

  std::map<std::string, int> seen;
  for (const auto& n : graph.nodes) {
    if (n.id.empty()) out.push_back("node id: empty id");
    if (++seen[n.id] == 2) out.push_back("duplicate node id: " + n.id);
    std::map<std::string, int> bases;
    for (const auto& a : n.attributes) {
      const auto& vocab = attribute_vocabulary();
      if (std::find(vocab.begin(), vocab.end(), a) == vocab.end())
        out.push_back("node " + n.id + ": unknown attribute " + a);
      if (++bases[std::string(attribute_base(a))] == 2)
        out.push_back("node " + n.id + ": attribute " + std::string(attribute_base(a)) +
                      " given more than once");
    }
  }

  std::map<std::string, int> pairs;
  bool endpoints_ok = true;
  for (const auto& e : graph.edges) {
    const std::string label = "edge " + e.a + "-" + e.b;
    if (!seen.count(e.a) || !seen.count(e.b)) {
      out.push_back(label + ": unknown endpoint");
      endpoints_ok = false;
    }
    if (e.a == e.b) out.push_back(label + ": self edge");
    if (e.relationships.empty()) out.push_back(label + ": no relationships");
    if (++pairs[pair_key(e.a, e.b)] == 2) out.push_back(label + ": duplicate edge for node pair");
  }

  if (!graph.nodes.empty() && endpoints_ok) {
    std::vector<std::size_t> parent(graph.nodes.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    for (const auto& e : graph.edges) {
      auto ia = graph.node_index(e.a), ib = graph.node_index(e.b);
      parent[find(*ia)] = find(*ib);
    }
    std::map<std::size_t, std::vector<std::string>> components;
    for (std::size_t i = 0; i < graph.nodes.size(); ++i)
      components[find(i)].push_back(graph.nodes[i].id);
    if (components.size() > 1) {
      std::string msg = "disconnected:";
      for (const auto& [root, ids] : components) {
        msg += " {";
        for (std::size_t i = 0; i < ids.size(); ++i) msg += (i ? "," : "") + ids[i];
        msg += "}";
      }
      out.push_back(msg);
    }
  }
  return out;
}

ActivityGraph activity_graph_from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("query document must be a JSON object");
  for (const auto& [key, value] : doc.items())
    if (key != "nodes" && key != "edges") throw ParseError("unexpected query key '" + key + "'");
  if (!doc.contains("nodes") || !doc["nodes"].is_array())
    throw ParseError("query document needs a 'nodes' array");

  ActivityGraph g;
  try {
    for (const auto& jn : doc["nodes"]) {
      QueryNode n;
      n.id = jn.at("id").get<std::string>();
      n.cls = parse_object_class(jn.at("class").get<std::string>());
      if (jn.contains("attributes"))
        for (const auto& a : jn["attributes"]) n.attributes.insert(canonical_attribute(a.get<std::string>()));
      g.nodes.push_back(std::move(n));
    }

    std::map<std::string, std::size_t> by_pair;
    std::vector<std::string> conflicts;
    if (doc.contains("edges")) {
      if (!doc["edges"].is_array()) throw ParseError("'edges' must be an array");
      for (const auto& je : doc["edges"]) {
        QueryEdge e;
        e.a = je.at("a").get<std::string>();
        e.b = je.at("b").get<std::string>();
        for (const auto& r : je.at("rel")) e.relationships.insert(parse_relationship(r.get<std::string>()));

        auto [it, fresh] = by_pair.try_emplace(pair_key(e.a, e.b), g.edges.size());
        if (fresh) {
          g.edges.push_back(std::move(e));
          continue;
        }
        // Duplicate pair: merge into one edge carrying the union.
        QueryEdge& kept = g.edges[it->second];
        const bool reversed = kept.a != e.a;
        const bool kept_later = kept.relationships.count(Relationship::later) > 0;
        const bool new_later = e.relationships.count(Relationship::later) > 0;
        if (reversed && new_later) {
          if (kept_later) {
            conflicts.push_back("edge " + kept.a + "-" + kept.b + ": conflicting 'later' directions");
            continue;
          }
          std::swap(kept.a, kept.b);
        }
        kept.relationships.insert(e.relationships.begin(), e.relationships.end());
      }
    }
    if (!conflicts.empty()) throw ValidationError(conflicts);
  } catch (const json::exception& ex) {
    throw ParseError(std::string("malformed query document: ") + ex.what());
  }

  auto violations = validate(g);
  if (!violations.empty()) throw ValidationError(std::move(violations));
  return g;
}

ActivityGraph parse_activity_graph(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& ex) {
    throw ParseError("query syntax error at byte " + std::to_string(ex.byte) + ": " + ex.what());
  }
  return activity_graph_from_json(doc);
}

json to_json(const ActivityGraph& graph) {
  json nodes = json::array();
  for (const auto& n : graph.nodes) {
    json attrs = json::array();
    for (const auto& a : n.attributes) attrs.push_back(a);
    nodes.push_back({{"id", n.id}, {"class", std::string(to_string(n.cls))}, {"attributes", attrs}});
  }
  json edges = json::array();
  for (const auto& e : graph.edges) {
    json rel = json::array();
    for (auto r : e.relationships) rel.push_back(std::string(to_string(r)));
    edges.push_back({{"a", e.a}, {"b", e.b}, {"rel", rel}});
  }
  return {{"nodes", nodes}, {"edges", edges}};
}

std::string serialize_activity_graph(const ActivityGraph& graph) {
  return to_json(graph).dump(2) + "\n";
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

json read_json_file(const std::string& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& ex) {
    throw ParseError(path + ": JSON syntax error at byte " + std::to_string(ex.byte));
  }
}

}  // namespace actgraph
