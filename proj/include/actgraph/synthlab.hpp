#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "actgraph/archive_store.hpp"
#include "actgraph/json_io.hpp"
#include "actgraph/matcher.hpp"
#include "actgraph/model_bundle.hpp"
#include "actgraph/training.hpp"

namespace actgraph {

// ---- generation ------------------------------------------------------------

struct NoiseParams {
  double miss_rate = 0.0;
  double track_break_rate = 0.0;
  double margin_noise_sigma = 0.0;

  bool is_off() const { return miss_rate == 0.0 && track_break_rate == 0.0 && margin_noise_sigma == 0.0; }
  void validate() const;
};

struct PlantSpec {
  std::string template_name;
  std::size_t count = 0;
};

struct SynthConfig {
  double width = 2000.0;
  double height = 2000.0;
  double duration = 3600.0;
  std::size_t n_clutter = 200;
  std::vector<PlantSpec> planted;
  NoiseParams noise;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

// Detections happen on a shared clock.
inline constexpr double kFramePeriod = 2.0;

// object_deposit, person_mount, car_following, group_meeting
const std::vector<std::string>& template_names();
ActivityGraph template_graph(const std::string& name);

// What the generator knows about each observation.
struct ObsLabel {
  std::int64_t entity = 0;
  ObjectClass cls = ObjectClass::person;
  std::set<std::string> attributes;

  bool operator==(const ObsLabel&) const = default;
};
using SynthLabels = std::map<ObsId, ObsLabel>;

struct GroundTruthInstance {
  std::string template_name;
  std::map<std::string, std::vector<ObsId>> mapping;  // query node -> obs ids
  Volume volume;
};

struct SynthArchive {
  ArchiveStore store;
  std::vector<GroundTruthInstance> truth;
  SynthLabels labels;
};

// Throws ConfigError on a bad config and InfeasibleError when the planted
// instances cannot be placed without overlapping.
SynthArchive generate_archive(const SynthConfig& config);

// Misses, track breaks (fresh track id from a random interior point) and
// Gaussian margin noise, in that order.
ArchiveStore inject_noise(const ArchiveStore& store, const NoiseParams& noise, std::uint64_t seed);

// Labels restricted to the observations still present in store.
SynthLabels restrict_labels(const SynthLabels& labels, const ArchiveStore& store);

json to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const json& doc);
json truth_to_json(std::span<const GroundTruthInstance> truth, const SynthConfig& config);
std::vector<GroundTruthInstance> truth_from_json(const json& doc);
std::string export_labels(const SynthLabels& labels);
SynthLabels parse_labels(std::string_view jsonl);

// ---- calibration -------------------------------------------------------------

struct CalibrationOptions {
  std::size_t pair_samples = 200000;
  std::uint64_t seed = 0;
  TrainOptions train;
};

// Fits every concept of the vocabulary and gathers the score statistics used
// for threshold selection, from a labelled archive.
ModelBundle calibrate_models(const ArchiveStore& store, const SynthLabels& labels,
                             const CalibrationOptions& options = {});

// Labelled archive used when no training data is supplied.
SynthConfig default_training_config(std::uint64_t seed);
ModelBundle calibrate_synthetic(std::uint64_t seed);

// ---- oracle ------------------------------------------------------------------

inline constexpr double kMaxBruteForceMappings = 1e7;

// Exhaustive MAP grounding of the full graph, ties broken as in ranking.
// Throws RefusalError above kMaxBruteForceMappings mappings.
Grounding brute_force_ground(const ActivityGraph& graph, const ArchiveStore& store, const CalibrationModel& models,
                             const EdgeContext& context = {});

// True if the instance's first listed observation per node passes every node
// and edge threshold of graph.
bool instance_passes(const GroundTruthInstance& instance, const ActivityGraph& graph,
                     const ThresholdAssignment& taus, const CalibrationModel& models, const ArchiveStore& store,
                     const EdgeContext& context = {});

// ---- evaluation --------------------------------------------------------------

struct RankedReturn {
  double score = 0.0;
  Volume volume;
};

std::vector<RankedReturn> ranked_returns(const RetrievalResult& result);
std::vector<RankedReturn> ranked_returns_from_json(const json& result_doc);

struct PrPoint {
  double score = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct EvalReport {
  std::vector<PrPoint> pr_points;  // one per distinct score, descending score
  double auc = 0.0;
  std::map<std::size_t, std::optional<double>> precision_at_k;  // absent if fewer than k returns
  std::size_t n_returns = 0;
  std::size_t n_truth = 0;
  std::size_t true_positives = 0;
  std::vector<bool> matched;  // per return
};

inline const std::vector<std::size_t> kDefaultPrecisionKs{1, 5, 10, 20};

EvalReport evaluate(std::span<const RankedReturn> returns, std::span<const GroundTruthInstance> truth,
                    const std::vector<std::size_t>& ks = kDefaultPrecisionKs);
EvalReport evaluate(const RetrievalResult& result, std::span<const GroundTruthInstance> truth,
                    const std::vector<std::size_t>& ks = kDefaultPrecisionKs);

json to_json(const EvalReport& report);
std::string pr_points_csv(const EvalReport& report);
std::string format_report(const EvalReport& report);

}  // namespace actgraph
