#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace actgraph {

using ObsId = std::int64_t;
using TrackId = std::int64_t;

// Top-left corner plus extent, in pixels.
struct Box {
  double x = 0, y = 0, w = 1, h = 1;

  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }
  double area() const { return w * h; }
  bool operator==(const Box&) const = default;
};

struct Observation {
  ObsId obs_id = 0;
  TrackId track_id = 0;
  double time = 0;
  Box box;
  std::map<std::string, double> class_margins;
  std::map<std::string, double> attr_margins;

  bool operator==(const Observation&) const = default;
};

struct Tracklet {
  TrackId track_id = 0;
  std::vector<ObsId> observations;  // strictly increasing time
  double t_start = 0;
  double t_end = 0;
};

// Axis-aligned spatial box and closed time interval.
struct Volume {
  double x = 0, y = 0, w = 0, h = 0, t_start = 0, t_end = 0;
  bool operator==(const Volume&) const = default;
};

// Immutable after construction; safe to share between query workers.
class ArchiveStore {
 public:
  ArchiveStore() = default;
  // Throws DataError on invariant violations (duplicate ids, bad boxes,
  // non-finite values, repeated times within a track).
  explicit ArchiveStore(std::vector<Observation> observations);

  std::size_t size() const { return observations_.size(); }
  bool empty() const { return observations_.empty(); }

  // Sorted by obs_id.
  std::span<const Observation> observations() const { return observations_; }
  const Observation& at(std::size_t index) const { return observations_[index]; }
  std::optional<std::size_t> index_of(ObsId id) const;
  const Observation& by_id(ObsId id) const;

  // Sorted by track_id.
  const std::vector<Tracklet>& tracklets() const { return tracklets_; }
  const Tracklet& tracklet(TrackId id) const;

  // Observations with window_start <= time <= window_end, ordered by (time, obs_id).
  std::vector<ObsId> in_window(double window_start, double window_end) const;
  std::vector<std::size_t> indices_in_window(double window_start, double window_end) const;

  std::optional<std::pair<double, double>> time_span() const;

 private:
  std::vector<Observation> observations_;
  std::unordered_map<ObsId, std::size_t> by_id_;
  std::vector<Tracklet> tracklets_;
  std::unordered_map<TrackId, std::size_t> track_pos_;
  // (time, index) sorted by time then obs_id.
  std::vector<std::pair<double, std::size_t>> time_index_;
};

// One observation per line; blank lines are skipped. Errors name the line.
ArchiveStore ingest_observations(std::string_view jsonl);
ArchiveStore load_archive(const std::string& path);
std::string export_observations(const ArchiveStore& store);

Volume spatio_temporal_volume(std::span<const Observation* const> members);
Volume spatio_temporal_volume(const ArchiveStore& store, std::span<const ObsId> obs_ids);
Volume extend(const Volume& v, const Observation& obs);

// Time extents are widened by one frame-second so instantaneous volumes still
// have measure; identical volumes always give 1.
inline constexpr double kVolumeTimePad = 1.0;
double volume_iou(const Volume& a, const Volume& b);

// FNV-1a 64 over raw bytes, rendered as 16 hex digits.
std::string checksum_hex(std::string_view bytes);

}  // namespace actgraph
