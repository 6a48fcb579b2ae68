#pragma once

#include <string>
#include <string_view>

#include "actgraph/concepts.hpp"
#include "actgraph/json_io.hpp"
#include "actgraph/planner.hpp"

namespace actgraph {

inline constexpr int kModelBundleVersion = 1;

// Everything a query needs besides the archive: concept models plus the score
// statistics used to pick thresholds.
struct ModelBundle {
  int version = kModelBundleVersion;
  CalibrationModel models;
  ScoreStats stats;

  bool operator==(const ModelBundle&) const = default;
};

json to_json(const CalibrationModel& models);
CalibrationModel calibration_model_from_json(const json& doc);
json to_json(const ScoreStats& stats);
ScoreStats score_stats_from_json(const json& doc);
json to_json(const RelFreqTable& freqs);
RelFreqTable rel_freq_table_from_json(const json& doc);

// One JSON document; the "version" field is mandatory on input.
std::string serialize_model_bundle(const ModelBundle& bundle);
ModelBundle parse_model_bundle(std::string_view document);
ModelBundle load_model_bundle(const std::string& path);

}  // namespace actgraph
