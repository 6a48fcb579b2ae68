#pragma once

#include <span>
#include <string>
#include <vector>

#include "actgraph/concepts.hpp"

namespace actgraph {

struct TrainOptions {
  double l2 = 0.1;        // on standardized features; bias unpenalized
  int folds = 5;          // held-out folds used to fit the Platt map
  int max_iterations = 100;
};

struct LinearFit {
  std::vector<double> weights;
  double bias = 0.0;
};

// L2-regularized logistic regression by damped Newton steps. Deterministic:
// rows are put into a canonical order before any arithmetic.
LinearFit fit_logistic(const std::vector<std::vector<double>>& rows, std::span<const int> labels,
                       const TrainOptions& options = {});

struct CalibratedLinear {
  LinearFit fit;
  PlattParams platt;
};

// Linear fit on all rows, Platt map fitted on margins from held-out folds.
CalibratedLinear train_calibrated_linear(const std::vector<std::vector<double>>& rows, std::span<const int> labels,
                                         const TrainOptions& options = {});

struct RelationshipExample {
  Observation a;
  Observation b;
  int label = 0;
};

// Needs both labels and at least 10 examples; throws DegenerateError otherwise.
LinearConcept train_relationship(const std::string& name, std::span<const RelationshipExample> examples,
                                 const TrainOptions& options = {});

// x1/x2 are tracklet_features() of the earlier and later tracklet.
struct ReIdExample {
  std::vector<double> x1;
  std::vector<double> x2;
  int label = 0;
};

ReIdModel train_reid(std::span<const ReIdExample> examples, const TrainOptions& options = {});

}  // namespace actgraph
