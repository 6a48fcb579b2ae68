#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "actgraph/archive_store.hpp"
#include "actgraph/querymodel.hpp"

namespace actgraph {

// Every probability handed to the scorer is clamped to [eps, 1 - eps] so log
// scores stay finite.
inline constexpr double kProbabilityFloor = 1e-3;
double clamp_probability(double p);

// P = 1 / (1 + exp(s * margin + t)); s < 0 makes P increase with the margin.
struct PlattParams {
  double s = -1.0;
  double t = 0.0;
  bool operator==(const PlattParams&) const = default;
};

double margin_to_probability(double margin, const PlattParams& platt);

struct PlattOptions {
  int max_iterations = 100;
  double tolerance = 1e-10;
};

// Maximum-likelihood fit with Platt's prior-corrected targets, solved by
// Newton's method with backtracking. labels are 0/1.
PlattParams fit_platt(std::span<const double> margins, std::span<const int> labels,
                      const PlattOptions& options = {});

struct LinearConcept {
  std::string name;
  std::vector<double> weights;
  double bias = 0.0;
  PlattParams platt;
  std::vector<std::string> feature_spec;

  double margin(std::span<const double> features) const;
  // Clamped to [eps, 1 - eps].
  double probability(std::span<const double> features) const;

  bool operator==(const LinearConcept&) const = default;
};

// Node concepts read a single detector margin: "class_margin:<name>" or
// "attr_margin:<name>".
LinearConcept margin_concept(const std::string& name, bool is_class, const PlattParams& platt);

// ---- pair features -------------------------------------------------------

inline constexpr std::size_t kPairFeatureCount = 8;
using PairFeatures = std::array<double, kPairFeatureCount>;

// norm_center_dist, center_dist, size_ratio, aspect_a, aspect_b, time_gap,
// overlap, abs_time_gap
const std::vector<std::string>& pair_feature_names();
PairFeatures pair_features(const Observation& a, const Observation& b);

// ---- re-identification ---------------------------------------------------

// Elementary tracklet features: a constant 1, nine scaled base features and
// their squares, so that the bilinear score can express squared differences
// between the end of one tracklet and the start of another.
const std::vector<std::string>& tracklet_feature_names();
std::vector<double> tracklet_features(std::span<const Observation* const> members);
std::vector<double> tracklet_features(const ArchiveStore& store, const Tracklet& tracklet);

struct ReIdModel {
  Eigen::MatrixXd W;
  PlattParams platt;

  bool operator==(const ReIdModel& o) const { return W == o.W && platt == o.platt; }
};

// trace(W * x1 * x2^T) = x2^T W x1
double reid_score(const Eigen::MatrixXd& W, std::span<const double> x1, std::span<const double> x2);

// Orders the pair by start time (then track id) before scoring.
double reid_probability(const ArchiveStore& store, const Tracklet& a, const Tracklet& b,
                        const ReIdModel& model);

struct TrackSummary {
  double t_start = 0;
  std::vector<double> features;
};
using TrackFeatureTable = std::unordered_map<TrackId, TrackSummary>;
TrackFeatureTable build_track_features(const ArchiveStore& store);

// ---- model bundle ---------------------------------------------------------

// "later" is a temporal check rather than a learned model.
struct LaterConfig {
  double gap_min = 0.0;
  double gap_max = 600.0;
  double p_satisfied = 1.0 - kProbabilityFloor;
  bool operator==(const LaterConfig&) const = default;
};

struct CalibrationModel {
  std::map<std::string, LinearConcept> class_models;
  std::map<std::string, LinearConcept> attr_models;
  std::map<std::string, LinearConcept> rel_models;  // near, not_near
  ReIdModel reid;
  LaterConfig later;

  // Throws ConfigError naming the first uncovered model.
  void check_covers_vocabulary() const;
  bool operator==(const CalibrationModel&) const = default;
};

// Context needed by "same entity" when the two observations are on different tracks.
struct EdgeContext {
  const TrackFeatureTable* tracks = nullptr;
  bool reid_enabled = true;
};

// P(o | obs) = P(class | obs) * prod_a P(a | obs)
double node_probability(const QueryNode& node, const Observation& obs, const CalibrationModel& models);
double edge_probability(const Observation& a, const Observation& b, const RelationSet& relationships,
                        const CalibrationModel& models, const EdgeContext& context = {});

// Resolves model lookups once; used in the matcher's inner loops.
class NodeScorer {
 public:
  NodeScorer(const QueryNode& node, const CalibrationModel& models);
  double log_probability(const Observation& obs) const;
  double probability(const Observation& obs) const;

 private:
  struct Factor {
    const LinearConcept* model;
    const std::map<std::string, double> Observation::*margins;
    std::string key;
  };
  std::vector<Factor> factors_;
};

class EdgeScorer {
 public:
  EdgeScorer(const RelationSet& relationships, const CalibrationModel& models, EdgeContext context = {});
  double log_probability(const Observation& a, const Observation& b) const;
  double probability(const Observation& a, const Observation& b) const;
  // Per-relationship clamped probabilities, in RelationSet order.
  std::vector<std::pair<Relationship, double>> factors(const Observation& a, const Observation& b) const;

 private:
  double factor(Relationship r, const Observation& a, const Observation& b, const PairFeatures* pf) const;

  RelationSet relationships_;
  const CalibrationModel* models_;
  EdgeContext context_;
  const LinearConcept* near_ = nullptr;
  const LinearConcept* not_near_ = nullptr;
};

}  // namespace actgraph
