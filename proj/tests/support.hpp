#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "actgraph/archive.hpp"
#include "actgraph/concepts.hpp"
#include "actgraph/model_bundle.hpp"
#include "actgraph/planner.hpp"
#include "actgraph/querymodel.hpp"

namespace testsupport {

using namespace actgraph;

std::string fixture_path(const std::string& name);
std::string fixture_text(const std::string& name);

// Synthetic calibration with seed 1, computed once per process.
const ModelBundle& calibrated_bundle();

Observation make_obs(ObsId id, TrackId track, double t, Box box, std::map<std::string, double> class_margins = {},
                     std::map<std::string, double> attr_margins = {});

// Margins for every class and attribute: +2 for the listed ones, -2 otherwise.
Observation labelled_obs(ObsId id, TrackId track, double t, Box box, ObjectClass cls,
                         const std::vector<std::string>& attributes = {});

// Hand-set models: every node concept is the identity Platt map (s = -1,
// t = 0); near is P = sigmoid(2.5 - 0.05 d) over centre distance d, not_near
// its mirror around d = 100; re-id always 0.5.
CalibrationModel toy_models();

// toy_models() plus statistics whose positives are spread evenly over
// [0.6, 1) and background over [0, 0.4) for every concept.
ModelBundle toy_bundle();

// Positive and background histograms filled with the given probability samples.
ConceptStats stats_from(const std::vector<double>& positives, const std::vector<double>& background);

// Small random archive: tracks of a random class drifting through a
// 300 x 300 px area within one minute; margins at +-2 with unit noise.
ArchiveStore random_archive(std::mt19937_64& rng, std::size_t n_obs);

// Random connected query with up to max_nodes nodes; extra non-tree edges are
// added with probability extra_edge_rate per remaining pair.
ActivityGraph random_query(std::mt19937_64& rng, std::size_t max_nodes, double extra_edge_rate = 0.3);

// Random connected graph over n nodes for spanning tree tests; relationships
// drawn from the full vocabulary.
ActivityGraph random_connected_graph(std::mt19937_64& rng, std::size_t n, double edge_rate);

}  // namespace testsupport
