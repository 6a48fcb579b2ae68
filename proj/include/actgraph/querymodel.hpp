#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace actgraph {

enum class ObjectClass { person, object, vehicle };

// Relationship order is the serialization order of relationship sets.
enum class Relationship { later, near, not_near, same_entity };

using RelationSet = std::set<Relationship>;

std::string_view to_string(ObjectClass c);
std::string_view to_string(Relationship r);
ObjectClass parse_object_class(std::string_view token);
Relationship parse_relationship(std::string_view token);

const std::vector<ObjectClass>& all_classes();
const std::vector<Relationship>& all_relationships();

// Attribute concept names. Qualified attributes are "base:qualifier"; the bare
// names "size" and "speed" are accepted on input as aliases of size:large and
// speed:moving.
const std::vector<std::string>& attribute_vocabulary();
std::string canonical_attribute(std::string_view token);
std::string_view attribute_base(std::string_view attribute);

bool is_symmetric(Relationship r);

struct QueryNode {
  std::string id;
  ObjectClass cls = ObjectClass::person;
  std::set<std::string> attributes;

  bool operator==(const QueryNode&) const = default;
};

// Endpoints are ordered; "later" means the observation bound to `a` precedes
// the one bound to `b`.
struct QueryEdge {
  std::string a;
  std::string b;
  RelationSet relationships;

  bool operator==(const QueryEdge&) const = default;
};

struct ActivityGraph {
  std::vector<QueryNode> nodes;
  std::vector<QueryEdge> edges;

  std::optional<std::size_t> node_index(std::string_view id) const;
  const QueryNode& node(std::string_view id) const;

  bool operator==(const ActivityGraph&) const = default;
};

// Throws ParseError (with byte offset), VocabularyError, or ValidationError.
ActivityGraph parse_activity_graph(std::string_view document);

// Sorted-key, byte-deterministic JSON.
std::string serialize_activity_graph(const ActivityGraph& graph);

// Empty iff every ActivityGraph invariant holds.
std::vector<std::string> validate(const ActivityGraph& graph);

}  // namespace actgraph
