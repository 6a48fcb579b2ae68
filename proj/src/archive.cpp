#include "actgraph/archive.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "actgraph/error.hpp"
#include "actgraph/json_io.hpp"

namespace actgraph {

namespace {

bool finite_margins(const std::map<std::string, double>& m) {
  return std::all_of(m.begin(), m.end(), [](const auto& kv) { return std::isfinite(kv.second); });
}

void check_observation(const Observation& o) {
  const std::string who = "observation " + std::to_string(o.obs_id);
  if (!std::isfinite(o.time) || o.time < 0) throw DataError(who + ": time must be finite and >= 0");
  const Box& b = o.box;
  if (!std::isfinite(b.x) || !std::isfinite(b.y) || !std::isfinite(b.w) || !std::isfinite(b.h))
    throw DataError(who + ": non-finite box");
  if (!(b.w > 0) || !(b.h > 0)) throw DataError(who + ": box width and height must be positive");
  if (!finite_margins(o.class_margins) || !finite_margins(o.attr_margins))
    throw DataError(who + ": non-finite margin");
}

Observation observation_from_json(const json& j) {
  Observation o;
  o.obs_id = j.at("obs_id").get<ObsId>();
  o.track_id = j.at("track_id").get<TrackId>();
  o.time = j.at("t").get<double>();
  const auto& box = j.at("box");
  if (!box.is_array() || box.size() != 4) throw DataError("box must be [x,y,w,h]");
  o.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
  if (j.contains("class_margins")) o.class_margins = j["class_margins"].get<std::map<std::string, double>>();
  if (j.contains("attr_margins")) o.attr_margins = j["attr_margins"].get<std::map<std::string, double>>();
  return o;
}

json observation_to_json(const Observation& o) {
  return {{"obs_id", o.obs_id},
          {"track_id", o.track_id},
          {"t", o.time},
          {"box", {o.box.x, o.box.y, o.box.w, o.box.h}},
          {"class_margins", o.class_margins},
          {"attr_margins", o.attr_margins}};
}

}  // namespace

ArchiveStore::ArchiveStore(std::vector<Observation> observations) : observations_(std::move(observations)) {
  std::sort(observations_.begin(), observations_.end(),
            [](const Observation& a, const Observation& b) { return a.obs_id < b.obs_id; });
  by_id_.reserve(observations_.size());
  for (std::size_t i = 0; i < observations_.size(); ++i) {
    const auto& o = observations_[i];
    check_observation(o);
    if (!by_id_.emplace(o.obs_id, i).second) throw DataError("duplicate obs_id " + std::to_string(o.obs_id));
  }

  time_index_.reserve(observations_.size());
  for (std::size_t i = 0; i < observations_.size(); ++i) time_index_.emplace_back(observations_[i].time, i);
  std::sort(time_index_.begin(), time_index_.end());  // index order == obs_id order

  std::map<TrackId, std::vector<std::size_t>> groups;
  for (const auto& [t, i] : time_index_) groups[observations_[i].track_id].push_back(i);
  tracklets_.reserve(groups.size());
  for (auto& [track, members] : groups) {
    Tracklet tr;
    tr.track_id = track;
    for (std::size_t k = 0; k < members.size(); ++k) {
      const auto& o = observations_[members[k]];
      if (k > 0 && !(o.time > observations_[members[k - 1]].time))
        throw DataError("track " + std::to_string(track) + ": observations " +
                        std::to_string(observations_[members[k - 1]].obs_id) + " and " +
                        std::to_string(o.obs_id) + " share a time");
      tr.observations.push_back(o.obs_id);
    }
    tr.t_start = observations_[members.front()].time;
    tr.t_end = observations_[members.back()].time;
    track_pos_.emplace(track, tracklets_.size());
    tracklets_.push_back(std::move(tr));
  }
}

std::optional<std::size_t> ArchiveStore::index_of(ObsId id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

const Observation& ArchiveStore::by_id(ObsId id) const {
  auto i = index_of(id);
  if (!i) throw DataError("unknown obs_id " + std::to_string(id));
  return observations_[*i];
}

const Tracklet& ArchiveStore::tracklet(TrackId id) const {
  auto it = track_pos_.find(id);
  if (it == track_pos_.end()) throw DataError("unknown track_id " + std::to_string(id));
  return tracklets_[it->second];
}

std::vector<std::size_t> ArchiveStore::indices_in_window(double window_start, double window_end) const {
  std::vector<std::size_t> out;
  if (window_end < window_start) return out;
  auto lo = std::lower_bound(time_index_.begin(), time_index_.end(), window_start,
                             [](const auto& e, double t) { return e.first < t; });
  auto hi = std::upper_bound(time_index_.begin(), time_index_.end(), window_end,
                             [](double t, const auto& e) { return t < e.first; });
  for (auto it = lo; it < hi; ++it) out.push_back(it->second);
  return out;
}

std::vector<ObsId> ArchiveStore::in_window(double window_start, double window_end) const {
  std::vector<ObsId> out;
  for (auto i : indices_in_window(window_start, window_end)) out.push_back(observations_[i].obs_id);
  return out;
}

std::optional<std::pair<double, double>> ArchiveStore::time_span() const {
  if (time_index_.empty()) return std::nullopt;
  return std::make_pair(time_index_.front().first, time_index_.back().first);
}

ArchiveStore ingest_observations(std::string_view jsonl) {
  std::vector<Observation> obs;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= jsonl.size()) {
    auto end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    auto line = jsonl.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == jsonl.size()) break;
      continue;
    }
    try {
      obs.push_back(observation_from_json(json::parse(line)));
      check_observation(obs.back());
    } catch (const json::exception& ex) {
      throw ParseError("line " + std::to_string(line_no) + ": " + ex.what());
    } catch (const DataError& ex) {
      throw DataError("line " + std::to_string(line_no) + ": " + ex.what());
    }
    if (end == jsonl.size()) break;
  }
  return ArchiveStore(std::move(obs));
}

ArchiveStore load_archive(const std::string& path) { return ingest_observations(read_text_file(path)); }

std::string export_observations(const ArchiveStore& store) {
  std::string out;
  for (const auto& o : store.observations()) {
    out += observation_to_json(o).dump();
    out += '\n';
  }
  return out;
}

Volume spatio_temporal_volume(std::span<const Observation* const> members) {
  if (members.empty()) throw DataError("spatio-temporal volume of an empty set");
  double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY, t0 = INFINITY, t1 = -INFINITY;
  for (const Observation* o : members) {
    x0 = std::min(x0, o->box.x);
    y0 = std::min(y0, o->box.y);
    x1 = std::max(x1, o->box.x + o->box.w);
    y1 = std::max(y1, o->box.y + o->box.h);
    t0 = std::min(t0, o->time);
    t1 = std::max(t1, o->time);
  }
  return {x0, y0, x1 - x0, y1 - y0, t0, t1};
}

Volume spatio_temporal_volume(const ArchiveStore& store, std::span<const ObsId> obs_ids) {
  std::vector<const Observation*> members;
  members.reserve(obs_ids.size());
  for (auto id : obs_ids) members.push_back(&store.by_id(id));
  return spatio_temporal_volume(members);
}

Volume extend(const Volume& v, const Observation& obs) {
  const double x0 = std::min(v.x, obs.box.x), y0 = std::min(v.y, obs.box.y);
  const double x1 = std::max(v.x + v.w, obs.box.x + obs.box.w);
  const double y1 = std::max(v.y + v.h, obs.box.y + obs.box.h);
  return {x0, y0, x1 - x0, y1 - y0, std::min(v.t_start, obs.time), std::max(v.t_end, obs.time)};
}

double volume_iou(const Volume& a, const Volume& b) {
  auto overlap = [](double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  };
  const double ix = overlap(a.x, a.x + a.w, b.x, b.x + b.w);
  const double iy = overlap(a.y, a.y + a.h, b.y, b.y + b.h);
  const double it = overlap(a.t_start, a.t_end + kVolumeTimePad, b.t_start, b.t_end + kVolumeTimePad);
  const double inter = ix * iy * it;
  const double va = a.w * a.h * (a.t_end - a.t_start + kVolumeTimePad);
  const double vb = b.w * b.h * (b.t_end - b.t_start + kVolumeTimePad);
  const double uni = va + vb - inter;
  if (!(uni > 0)) return a == b ? 1.0 : 0.0;
  if (a == b) return 1.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::string checksum_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[i] = digits[h & 0xf];
  return out;
}

double RelFreqTable::of(Relationship r) const {
  auto it = freq.find(std::string(to_string(r)));
  return it == freq.end() ? 1.0 : it->second;
}

std::vector<ObsId> query_candidates(const ArchiveStore& store, const QueryNode& node,
                                    const CalibrationModel& models, double tau) {
  NodeScorer scorer(node, models);
  std::vector<ObsId> out;
  for (const auto& o : store.observations())
    if (scorer.probability(o) >= tau) out.push_back(o.obs_id);
  return out;
}

RelFreqTable estimate_relationship_frequencies(const ArchiveStore& store, const CalibrationModel& models,
                                               std::size_t n_samples, std::uint64_t seed,
                                               const EdgeContext& context) {
  if (n_samples < 1) throw DegenerateError("frequency estimation needs at least one sample");
  const std::size_t n = store.size();
  if (n < 2) throw DegenerateError("frequency estimation needs at least two observations");

  TrackFeatureTable local_tracks;
  EdgeContext ctx = context;
  if (!ctx.tracks) {
    local_tracks = build_track_features(store);
    ctx.tracks = &local_tracks;
  }

  std::vector<EdgeScorer> scorers;
  for (auto r : all_relationships()) scorers.emplace_back(RelationSet{r}, models, ctx);
  std::vector<std::size_t> hits(scorers.size(), 0);

  auto visit = [&](std::size_t i, std::size_t j) {
    for (std::size_t k = 0; k < scorers.size(); ++k)
      if (scorers[k].probability(store.at(i), store.at(j)) > kRelationshipDecision) ++hits[k];
  };

  const long double all_pairs = static_cast<long double>(n) * static_cast<long double>(n - 1);
  std::size_t drawn = 0;
  if (static_cast<long double>(n_samples) >= all_pairs) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) visit(i, j), ++drawn;
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::uniform_int_distribution<std::size_t> pick_other(0, n - 2);
    for (; drawn < n_samples; ++drawn) {
      std::size_t i = pick(rng);
      std::size_t j = pick_other(rng);
      if (j >= i) ++j;
      visit(i, j);
    }
  }

  RelFreqTable table;
  table.sample_size = drawn;
  table.seed = seed;
  for (std::size_t k = 0; k < scorers.size(); ++k) {
    const double f = static_cast<double>(hits[k]) / static_cast<double>(drawn);
    table.freq[std::string(to_string(all_relationships()[k]))] = hits[k] == 0 ? 1.0 : f;
  }
  return table;
}

RelFreqTable archive_frequencies(const ArchiveStore& store, const CalibrationModel& models, std::size_t n_samples,
                                 std::uint64_t seed, const EdgeContext& context) {
  if (store.size() < 2) return RelFreqTable{{}, 0, seed};
  return estimate_relationship_frequencies(store, models, n_samples, seed, context);
}

}  // namespace actgraph
