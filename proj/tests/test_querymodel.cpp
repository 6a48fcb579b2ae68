#include <doctest.h>

#include <random>

#include "actgraph/error.hpp"
#include "actgraph/json_io.hpp"
#include "actgraph/querymodel.hpp"
#include "support.hpp"

using namespace actgraph;
using namespace testsupport;

TEST_CASE("minimal query") {
  const ActivityGraph g = parse_activity_graph(R"({"nodes":[{"id":"p","class":"person"}]})");
  CHECK(g.nodes.size() == 1);
  CHECK(g.edges.empty());
  CHECK(g.nodes[0].attributes.empty());
}

TEST_CASE("unknown relationship names the token") {
  const char* doc = R"({"nodes":[{"id":"a","class":"person"},{"id":"b","class":"vehicle"}],
                        "edges":[{"a":"a","b":"b","rel":["nearby"]}]})";
  try {
    parse_activity_graph(doc);
    FAIL("expected a vocabulary error");
  } catch (const VocabularyError& e) {
    CHECK(e.token() == "nearby");
  }
}

TEST_CASE("unknown class and attribute are vocabulary errors") {
  CHECK_THROWS_AS(parse_activity_graph(R"({"nodes":[{"id":"a","class":"bicycle"}]})"), VocabularyError);
  CHECK_THROWS_AS(parse_activity_graph(R"({"nodes":[{"id":"a","class":"person","attributes":["red"]}]})"),
                  VocabularyError);
}

TEST_CASE("syntax errors carry a position") {
  try {
    parse_activity_graph(R"({"nodes": [ {"id": "a", "class": "person"} )");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
}

TEST_CASE("two-person deposit fixture") {
  const std::string text = fixture_text("two_person_deposit.json");
  const ActivityGraph g = parse_activity_graph(text);
  CHECK(g.nodes.size() == 4);
  CHECK(g.edges.size() == 4);
  std::size_t persons = 0;
  for (const auto& n : g.nodes) persons += n.cls == ObjectClass::person ? 1 : 0;
  CHECK(persons == 2);
  RelationSet seen;
  for (const auto& e : g.edges) seen.insert(e.relationships.begin(), e.relationships.end());
  CHECK(seen.count(Relationship::near));
  CHECK(seen.count(Relationship::later));
  CHECK(seen.count(Relationship::same_entity));
  // The committed fixture is in canonical form.
  CHECK(serialize_activity_graph(g) == text);
}

TEST_CASE("validate") {
  auto node = [](const char* id) { return QueryNode{id, ObjectClass::person, {}}; };
  SUBCASE("connected path") {
    ActivityGraph g{{node("a"), node("b"), node("c")},
                    {{"a", "b", {Relationship::near}}, {"b", "c", {Relationship::later}}}};
    CHECK(validate(g).empty());
  }
  SUBCASE("two components") {
    ActivityGraph g{{node("a"), node("b"), node("c"), node("d")},
                    {{"a", "b", {Relationship::near}}, {"c", "d", {Relationship::near}}}};
    const auto v = validate(g);
    REQUIRE(v.size() == 1);
    CHECK(v[0].rfind("disconnected", 0) == 0);
  }
  SUBCASE("duplicate node id") {
    ActivityGraph g{{node("a"), node("a")}, {}};
    const auto v = validate(g);
    REQUIRE_FALSE(v.empty());
    CHECK(v[0].find("a") != std::string::npos);
  }
  SUBCASE("self edge, missing endpoint, empty relationship set, parallel edge") {
    ActivityGraph g{{node("a"), node("b")},
                    {{"a", "a", {Relationship::near}},
                     {"a", "z", {Relationship::near}},
                     {"a", "b", {}},
                     {"b", "a", {Relationship::near}}}};
    CHECK(validate(g).size() >= 4);
  }
  SUBCASE("empty graph") {
    CHECK_FALSE(validate(ActivityGraph{}).empty());
  }
}

TEST_CASE("parse rejects invalid structure with every violation") {
  try {
    parse_activity_graph(
        R"({"nodes":[{"id":"a","class":"person"},{"id":"b","class":"person"},{"id":"c","class":"object"}],
            "edges":[{"a":"a","b":"a","rel":["near"]}]})");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.violations().size() >= 2);
  }
}

TEST_CASE("duplicate edges between one pair merge into their union") {
  const ActivityGraph g = parse_activity_graph(
      R"({"nodes":[{"id":"a","class":"person"},{"id":"b","class":"object"}],
          "edges":[{"a":"a","b":"b","rel":["near"]},{"a":"a","b":"b","rel":["later"]}]})");
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0].relationships == RelationSet{Relationship::later, Relationship::near});
}

TEST_CASE("attribute aliases") {
  const ActivityGraph g =
      parse_activity_graph(R"({"nodes":[{"id":"a","class":"vehicle","attributes":["size","speed"]}]})");
  CHECK(g.nodes[0].attributes == std::set<std::string>{"size:large", "speed:moving"});
}

TEST_CASE("parse inverts serialize on random graphs") {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 300; ++i) {
    const ActivityGraph g = random_query(rng, 6, 0.4);
    REQUIRE(validate(g).empty());
    const std::string text = serialize_activity_graph(g);
    const ActivityGraph back = parse_activity_graph(text);
    CHECK(back == g);
    CHECK(serialize_activity_graph(back) == text);
  }
}

TEST_CASE("serialization has sorted keys") {
  const ActivityGraph g = parse_activity_graph(R"({"nodes":[{"class":"person","id":"p","attributes":[]}]})");
  const std::string text = serialize_activity_graph(g);
  CHECK(text.find("\"attributes\"") < text.find("\"class\""));
  CHECK(text.find("\"class\"") < text.find("\"id\""));
  CHECK(text.find("\"edges\"") < text.find("\"nodes\""));
}
