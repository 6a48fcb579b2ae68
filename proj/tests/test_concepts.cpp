#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "actgraph/concepts.hpp"
#include "actgraph/error.hpp"
#include "actgraph/json_io.hpp"
#include "support.hpp"

using namespace actgraph;
using namespace testsupport;

namespace {

double logit(double p) { return std::log(p / (1 - p)); }

LinearConcept constant_concept(const std::string& name, double p) {
  LinearConcept c;
  c.name = name;
  c.feature_spec = pair_feature_names();
  c.weights.assign(kPairFeatureCount, 0.0);
  c.bias = logit(p);
  c.platt = {-1.0, 0.0};
  return c;
}

Observation from_json(const json& j) {
  const auto box = j.at("box");
  return make_obs(j.at("obs_id").get<ObsId>(), j.at("track_id").get<TrackId>(), j.at("t").get<double>(),
                  {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()});
}

}  // namespace

TEST_CASE("margin_to_probability") {
  CHECK(margin_to_probability(0.0, {-1.0, 0.0}) == 0.5);
  CHECK(margin_to_probability(1.0, {-2.0, 0.0}) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
  CHECK(margin_to_probability(1.0, {-2.0, 0.0}) == doctest::Approx(0.88080).epsilon(1e-5));
  CHECK(std::abs(margin_to_probability(1e6, {-1.0, 0.0}) - 1.0) <= 1e-12);
  CHECK(margin_to_probability(-1e6, {-1.0, 0.0}) >= 0.0);

  SUBCASE("strictly monotone on sorted margins") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g(0.0, 3.0);
    std::vector<double> m(10000);
    for (auto& v : m) v = g(rng);
    std::sort(m.begin(), m.end());
    m.erase(std::unique(m.begin(), m.end()), m.end());
    const PlattParams p{-1.3, 0.4};
    for (std::size_t i = 1; i < m.size(); ++i) {
      const double a = margin_to_probability(m[i - 1], p), b = margin_to_probability(m[i], p);
      REQUIRE(a < b);
      REQUIRE(a > 0.0);
      REQUIRE(b < 1.0);
    }
  }
}

TEST_CASE("fit_platt") {
  SUBCASE("separable data orients the map") {
    const std::vector<double> m{-1, -1, 1, 1};
    const std::vector<int> y{0, 0, 1, 1};
    const PlattParams p = fit_platt(m, y);
    CHECK(margin_to_probability(1, p) > 0.5);
    CHECK(margin_to_probability(-1, p) < 0.5);
  }
  SUBCASE("two Gaussians: held-out Brier below the constant baseline") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> m;
    std::vector<int> y;
    for (int i = 0; i < 2000; ++i) {
      const int label = i % 2;
      y.push_back(label);
      m.push_back((label ? 1.0 : -1.0) + g(rng));
    }
    std::vector<double> train_m(m.begin(), m.begin() + 1000), test_m(m.begin() + 1000, m.end());
    std::vector<int> train_y(y.begin(), y.begin() + 1000), test_y(y.begin() + 1000, y.end());
    const PlattParams p = fit_platt(train_m, train_y);
    double brier = 0;
    for (std::size_t i = 0; i < test_m.size(); ++i) {
      const double d = margin_to_probability(test_m[i], p) - test_y[i];
      brier += d * d;
    }
    brier /= static_cast<double>(test_m.size());
    CHECK(brier < 0.25);
    // The optimum of the logistic likelihood for unit Gaussians at +-1 is s = -2, t = 0.
    CHECK(p.s == doctest::Approx(-2.0).epsilon(0.15));
    CHECK(std::abs(p.t) < 0.2);
  }
  SUBCASE("inverted labels flip the slope") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> m;
    std::vector<int> y, inv;
    for (int i = 0; i < 400; ++i) {
      y.push_back(i % 2);
      inv.push_back(1 - i % 2);
      m.push_back((i % 2 ? 1.0 : -1.0) + g(rng));
    }
    const PlattParams a = fit_platt(m, y), b = fit_platt(m, inv);
    CHECK(a.s < 0);
    CHECK(b.s > 0);
    CHECK(a.s == doctest::Approx(-b.s).epsilon(1e-6));
  }
  SUBCASE("degenerate inputs") {
    const std::vector<double> m{1, 2, 3, 4};
    CHECK_THROWS_AS(fit_platt(m, std::vector<int>{1, 1, 1, 1}), DegenerateError);
    CHECK_THROWS_AS(fit_platt(std::vector<double>{1, 2, 3}, std::vector<int>{0, 1, 0}), DegenerateError);
  }
}

TEST_CASE("node_probability") {
  const CalibrationModel models = toy_models();
  SUBCASE("product rule") {
    const Observation o = make_obs(1, 1, 0, {0, 0, 10, 10}, {{"person", logit(0.9)}}, {{"appearing", logit(0.8)}});
    CHECK(node_probability({"n", ObjectClass::person, {"appearing"}}, o, models) == doctest::Approx(0.72).epsilon(1e-12));
    CHECK(node_probability({"n", ObjectClass::person, {}}, o, models) == doctest::Approx(0.9).epsilon(1e-12));
  }
  SUBCASE("missing margin names the concept") {
    const Observation o = make_obs(1, 1, 0, {0, 0, 10, 10}, {{"person", 1.0}});
    try {
      node_probability({"n", ObjectClass::person, {"disappearing"}}, o, models);
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("disappearing") != std::string::npos);
    }
  }
  SUBCASE("log domain agrees with the product") {
    std::mt19937_64 rng(17);
    const ArchiveStore store = random_archive(rng, 200);
    std::uniform_int_distribution<int> cls(0, 2), coin(0, 1);
    for (const auto& o : store.observations()) {
      QueryNode node{"n", all_classes()[static_cast<std::size_t>(cls(rng))], {}};
      if (coin(rng)) node.attributes.insert("speed:moving");
      if (coin(rng)) node.attributes.insert("appearing");
      const NodeScorer scorer(node, models);
      const double p = node_probability(node, o, models);
      CHECK(std::abs(std::exp(scorer.log_probability(o)) - p) <= 1e-12);
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
}

TEST_CASE("pair_features") {
  const auto names = pair_feature_names();
  REQUIRE(names.size() == kPairFeatureCount);
  const Observation a = make_obs(1, 1, 3.0, {10, 20, 30, 60});
  const Observation b = make_obs(2, 2, 8.0, {50, 10, 20, 20});
  SUBCASE("identical observations") {
    const auto f = pair_features(a, a);
    CHECK(f[0] == 0.0);
    CHECK(f[2] == 1.0);
    CHECK(f[5] == 0.0);
    CHECK(f[6] == 1.0);
  }
  SUBCASE("swapping negates only the time gap") {
    const auto ab = pair_features(a, b), ba = pair_features(b, a);
    CHECK(ab[0] == ba[0]);
    CHECK(ab[1] == ba[1]);
    CHECK(ab[2] == ba[2]);
    CHECK(ab[3] == ba[4]);
    CHECK(ab[4] == ba[3]);
    CHECK(ab[5] == -ba[5]);
    CHECK(ab[6] == ba[6]);
    CHECK(ab[7] == ba[7]);
  }
  SUBCASE("committed fixture pair") {
    const json doc = read_json_file(fixture_path("pair_features.json"));
    CHECK(doc.at("names").get<std::vector<std::string>>() == names);
    const auto f = pair_features(from_json(doc.at("a")), from_json(doc.at("b")));
    const auto expected = doc.at("expected").get<std::vector<double>>();
    for (std::size_t i = 0; i < kPairFeatureCount; ++i) CHECK(f[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("edge_probability") {
  CalibrationModel models = toy_models();
  models.rel_models["near"] = constant_concept("near", 0.7);
  const Observation a = make_obs(1, 1, 0.0, {0, 0, 10, 10});
  const Observation b = make_obs(2, 2, 5.0, {5, 5, 10, 10});
  const Observation a_later = make_obs(3, 1, 9.0, {0, 0, 10, 10});

  CHECK(edge_probability(a, b, {Relationship::near}, models) == doctest::Approx(0.7).epsilon(1e-12));
  models.later.p_satisfied = 0.98;
  CHECK(edge_probability(a, b, {Relationship::near, Relationship::later}, models) ==
        doctest::Approx(0.686).epsilon(1e-12));
  CHECK(edge_probability(b, a, {Relationship::later}, models) == doctest::Approx(0.02).epsilon(1e-12));

  SUBCASE("same entity on a shared track") {
    CHECK(edge_probability(a, a_later, {Relationship::same_entity}, models) == 1.0 - kProbabilityFloor);
  }
  SUBCASE("same entity across tracks without re-id is impossible") {
    CHECK(edge_probability(a, b, {Relationship::same_entity}, models, EdgeContext{nullptr, false}) ==
          kProbabilityFloor);
  }
  SUBCASE("same entity across tracks uses re-id") {
    const ArchiveStore store({a, b, a_later});
    const TrackFeatureTable tracks = build_track_features(store);
    CHECK(edge_probability(a, b, {Relationship::same_entity}, models, EdgeContext{&tracks, true}) ==
          doctest::Approx(0.5));
    CHECK_THROWS_AS(edge_probability(a, b, {Relationship::same_entity}, models, EdgeContext{nullptr, true}),
                    DataError);
  }
  SUBCASE("an observation never relates to itself") {
    CHECK(edge_probability(a, a, {Relationship::near}, models) == kProbabilityFloor);
    CHECK(edge_probability(a, a, {Relationship::same_entity}, models) == kProbabilityFloor);
  }
  SUBCASE("later window bounds") {
    models.later = LaterConfig{};
    CHECK(edge_probability(a, make_obs(9, 9, 0.0, {50, 50, 5, 5}), {Relationship::later}, models) ==
          1.0 - kProbabilityFloor);
    CHECK(edge_probability(a, make_obs(9, 9, 600.0, {50, 50, 5, 5}), {Relationship::later}, models) ==
          1.0 - kProbabilityFloor);
    CHECK(edge_probability(a, make_obs(9, 9, 600.5, {50, 50, 5, 5}), {Relationship::later}, models) ==
          doctest::Approx(kProbabilityFloor).epsilon(1e-12));
  }
  SUBCASE("missing relationship model is a configuration error") {
    models.rel_models.erase("not_near");
    CHECK_THROWS_AS(edge_probability(a, b, {Relationship::not_near}, models), ConfigError);
  }
}

TEST_CASE("edge log domain agrees with the product and stays inside (0, 1)") {
  const CalibrationModel models = toy_models();
  std::mt19937_64 rng(23);
  const ArchiveStore store = random_archive(rng, 80);
  const TrackFeatureTable tracks = build_track_features(store);
  const EdgeContext ctx{&tracks, true};
  std::uniform_int_distribution<std::size_t> pick(0, store.size() - 1);
  std::uniform_int_distribution<int> mask(1, 15);
  for (int i = 0; i < 2000; ++i) {
    RelationSet rels;
    const int m = mask(rng);
    for (std::size_t r = 0; r < 4; ++r)
      if (m & (1 << r)) rels.insert(all_relationships()[r]);
    const Observation& a = store.at(pick(rng));
    const Observation& b = store.at(pick(rng));
    const EdgeScorer scorer(rels, models, ctx);
    double product = 1.0;
    for (auto& [_, p] : scorer.factors(a, b)) {
      CHECK(p >= kProbabilityFloor);
      CHECK(p <= 1.0 - kProbabilityFloor);
      product *= p;
    }
    CHECK(std::abs(scorer.probability(a, b) - product) <= 1e-12);
    CHECK(std::abs(std::exp(scorer.log_probability(a, b)) - product) <= 1e-12);
    CHECK(edge_probability(a, b, rels, models, ctx) == scorer.probability(a, b));
  }
}

TEST_CASE("re-id scoring") {
  const std::size_t d = tracklet_feature_names().size();
  CHECK(d == 19);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  std::vector<double> e1(d, 0.0);
  e1[0] = 1.0;
  CHECK(reid_score(I, e1, e1) == 1.0);
  CHECK(margin_to_probability(0.0, {-1.0, 0.0}) == 0.5);

  SUBCASE("score is x2' W x1") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    Eigen::MatrixXd W(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = g(rng);
    std::vector<double> x1(d), x2(d);
    for (auto& v : x1) v = g(rng);
    for (auto& v : x2) v = g(rng);
    double trace = 0;  // trace(W x1 x2')
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < d; ++k) trace += W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) * x1[k] * x2[i];
    CHECK(reid_score(W, x1, x2) == doctest::Approx(trace).epsilon(1e-12));
  }
  SUBCASE("wrong dimension") {
    CHECK_THROWS_AS(reid_score(Eigen::MatrixXd::Identity(3, 3), e1, e1), ConfigError);
  }
  SUBCASE("empty tracklet") {
    const ArchiveStore store({make_obs(1, 1, 0, {0, 0, 5, 5})});
    Tracklet empty;
    ReIdModel model{I, {-1.0, 0.0}};
    CHECK_THROWS_AS(reid_probability(store, empty, store.tracklet(1), model), DataError);
  }
  SUBCASE("probability is symmetric in argument order") {
    std::mt19937_64 rng(13);
    const ArchiveStore store = random_archive(rng, 40);
    std::normal_distribution<double> g(0.0, 0.1);
    Eigen::MatrixXd W(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = g(rng);
    const ReIdModel model{W, {-1.0, 0.0}};
    const auto& tr = store.tracklets();
    for (std::size_t i = 0; i + 1 < tr.size(); ++i) {
      const double p = reid_probability(store, tr[i], tr[i + 1], model);
      CHECK(p == reid_probability(store, tr[i + 1], tr[i], model));
      CHECK(p >= kProbabilityFloor);
      CHECK(p <= 1.0 - kProbabilityFloor);
    }
  }
}

TEST_CASE("vocabulary coverage") {
  CalibrationModel m = toy_models();
  CHECK_NOTHROW(m.check_covers_vocabulary());
  m.attr_models.erase("size:small");
  CHECK_THROWS_AS(m.check_covers_vocabulary(), ConfigError);
}
