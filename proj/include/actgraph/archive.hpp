#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "actgraph/archive_store.hpp"
#include "actgraph/concepts.hpp"
#include "actgraph/querymodel.hpp"

namespace actgraph {

// Empirical p(r): the fraction of sampled ordered observation pairs on which
// relationship r fires. Relationships never seen are non-discriminative (1.0).
struct RelFreqTable {
  std::map<std::string, double> freq;
  std::size_t sample_size = 0;
  std::uint64_t seed = 0;

  double of(Relationship r) const;
};

// A relationship "fires" on a pair when its probability exceeds this value.
inline constexpr double kRelationshipDecision = 0.5;
inline constexpr std::size_t kDefaultFrequencySamples = 100000;

// Observation ids whose node probability is at least tau, in obs_id order.
std::vector<ObsId> query_candidates(const ArchiveStore& store, const QueryNode& node,
                                    const CalibrationModel& models, double tau);

// Samples ordered pairs (a != b) uniformly with replacement; when n_samples
// covers every ordered pair the pairs are enumerated exhaustively instead.
RelFreqTable estimate_relationship_frequencies(const ArchiveStore& store, const CalibrationModel& models,
                                               std::size_t n_samples, std::uint64_t seed,
                                               const EdgeContext& context = {});

// As above, but archives with fewer than two observations get the empty table
// (every relationship non-discriminative) instead of an error.
RelFreqTable archive_frequencies(const ArchiveStore& store, const CalibrationModel& models, std::size_t n_samples,
                                 std::uint64_t seed, const EdgeContext& context = {});

}  // namespace actgraph
