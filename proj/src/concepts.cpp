#include "actgraph/concepts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "actgraph/error.hpp"

namespace actgraph {

double clamp_probability(double p) {
  return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
}

double margin_to_probability(double margin, const PlattParams& platt) {
  const double z = platt.s * margin + platt.t;
  if (z >= 0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

PlattParams fit_platt(std::span<const double> margins, std::span<const int> labels,
                      const PlattOptions& options) {
  if (margins.size() != labels.size()) throw DataError("fit_platt: margins and labels differ in length");
  if (margins.size() < 4) throw DegenerateError("fit_platt: need at least 4 examples");
  const auto n = margins.size();
  const double prior1 = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double prior0 = static_cast<double>(n) - prior1;
  if (prior1 == 0 || prior0 == 0) throw DegenerateError("fit_platt: labels contain a single class");

  const double hi_target = (prior1 + 1.0) / (prior1 + 2.0);
  const double lo_target = 1.0 / (prior0 + 2.0);
  std::vector<double> target(n);
  for (std::size_t i = 0; i < n; ++i) target[i] = labels[i] == 1 ? hi_target : lo_target;

  // Negative log-likelihood written to avoid overflow in exp.
  auto objective = [&](double A, double B) {
    double f = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = margins[i] * A + B;
      f += z >= 0 ? target[i] * z + std::log1p(std::exp(-z)) : (target[i] - 1) * z + std::log1p(std::exp(z));
    }
    return f;
  };

  constexpr double kMinStep = 1e-10;
  constexpr double kSigma = 1e-12;  // keeps the Hessian positive definite
  double A = 0.0;
  double B = std::log((prior0 + 1.0) / (prior1 + 1.0));
  double fval = objective(A, B);

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    double h11 = kSigma, h22 = kSigma, h21 = 0, g1 = 0, g2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = margins[i] * A + B;
      double p, q;
      if (z >= 0) {
        const double e = std::exp(-z);
        p = e / (1.0 + e);
        q = 1.0 / (1.0 + e);
      } else {
        const double e = std::exp(z);
        p = 1.0 / (1.0 + e);
        q = e / (1.0 + e);
      }
      const double d2 = p * q;
      h11 += margins[i] * margins[i] * d2;
      h22 += d2;
      h21 += margins[i] * d2;
      const double d1 = target[i] - p;
      g1 += margins[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < options.tolerance && std::abs(g2) < options.tolerance) break;

    const double det = h11 * h22 - h21 * h21;
    const double dA = -(h22 * g1 - h21 * g2) / det;
    const double dB = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * dA + g2 * dB;

    double step = 1.0;
    while (step >= kMinStep) {
      const double nA = A + step * dA, nB = B + step * dB;
      const double nf = objective(nA, nB);
      if (nf < fval + 1e-4 * step * gd) {
        A = nA;
        B = nB;
        fval = nf;
        break;
      }
      step /= 2;
    }
    if (step < kMinStep) break;
    if (std::abs(step * dA) < options.tolerance && std::abs(step * dB) < options.tolerance) break;
  }
  if (A == 0.0) A = -1e-12;
  return {A, B};
}

double LinearConcept::margin(std::span<const double> features) const {
  if (features.size() != weights.size())
    throw ConfigError("concept " + name + ": expected " + std::to_string(weights.size()) + " features, got " +
                      std::to_string(features.size()));
  double m = bias;
  for (std::size_t i = 0; i < weights.size(); ++i) m += weights[i] * features[i];
  return m;
}

double LinearConcept::probability(std::span<const double> features) const {
  return clamp_probability(margin_to_probability(margin(features), platt));
}

LinearConcept margin_concept(const std::string& name, bool is_class, const PlattParams& platt) {
  LinearConcept c;
  c.name = name;
  c.weights = {1.0};
  c.bias = 0.0;
  c.platt = platt;
  c.feature_spec = {(is_class ? "class_margin:" : "attr_margin:") + name};
  return c;
}

// ---- pair features -------------------------------------------------------

const std::vector<std::string>& pair_feature_names() {
  static const std::vector<std::string> names{"norm_center_dist", "center_dist", "size_ratio", "aspect_a",
                                              "aspect_b",         "time_gap",    "overlap",    "abs_time_gap"};
  return names;
}

PairFeatures pair_features(const Observation& a, const Observation& b) {
  const Box& p = a.box;
  const Box& q = b.box;
  const double dist = std::hypot(p.cx() - q.cx(), p.cy() - q.cy());
  const double mean_diag = 0.5 * (std::hypot(p.w, p.h) + std::hypot(q.w, q.h));
  const double ix = std::max(0.0, std::min(p.x + p.w, q.x + q.w) - std::max(p.x, q.x));
  const double iy = std::max(0.0, std::min(p.y + p.h, q.y + q.h) - std::max(p.y, q.y));
  const double inter = ix * iy;
  const double gap = b.time - a.time;
  return {dist / mean_diag,
          dist,
          std::min(p.area(), q.area()) / std::max(p.area(), q.area()),
          p.w / p.h,
          q.w / q.h,
          gap,
          inter / (p.area() + q.area() - inter),
          std::abs(gap)};
}

// ---- re-identification ---------------------------------------------------

namespace {
constexpr std::size_t kTrackBase = 9;
}

const std::vector<std::string>& tracklet_feature_names() {
  static const std::vector<std::string> names = [] {
    const std::vector<std::string> base{"aspect", "size",  "speed", "start_x", "start_y",
                                        "end_x",  "end_y", "start_t", "end_t"};
    std::vector<std::string> out{"one"};
    out.insert(out.end(), base.begin(), base.end());
    for (const auto& b : base) out.push_back(b + "^2");
    return out;
  }();
  return names;
}

std::vector<double> tracklet_features(std::span<const Observation* const> members) {
  if (members.empty()) throw DataError("tracklet features of an empty tracklet");
  double aspect = 0, size = 0, path = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const Box& b = members[i]->box;
    aspect += b.w / b.h;
    size += std::sqrt(b.area());
    if (i > 0) {
      const Box& prev = members[i - 1]->box;
      path += std::hypot(b.cx() - prev.cx(), b.cy() - prev.cy());
    }
  }
  const double count = static_cast<double>(members.size());
  const Observation& first = *members.front();
  const Observation& last = *members.back();
  const double duration = last.time - first.time;
  const double speed = duration > 0 ? path / duration : 0.0;

  const double base[kTrackBase] = {aspect / count,          size / count / 100.0,    speed / 10.0,
                                   first.box.cx() / 1000.0, first.box.cy() / 1000.0, last.box.cx() / 1000.0,
                                   last.box.cy() / 1000.0,  first.time / 1000.0,     last.time / 1000.0};
  std::vector<double> x;
  x.reserve(1 + 2 * kTrackBase);
  x.push_back(1.0);
  for (double v : base) x.push_back(v);
  for (double v : base) x.push_back(v * v);
  return x;
}

std::vector<double> tracklet_features(const ArchiveStore& store, const Tracklet& tracklet) {
  std::vector<const Observation*> members;
  members.reserve(tracklet.observations.size());
  for (auto id : tracklet.observations) members.push_back(&store.by_id(id));
  return tracklet_features(members);
}

double reid_score(const Eigen::MatrixXd& W, std::span<const double> x1, std::span<const double> x2) {
  const auto d = static_cast<Eigen::Index>(x1.size());
  if (W.rows() != d || W.cols() != d || static_cast<Eigen::Index>(x2.size()) != d)
    throw ConfigError("re-id: W is " + std::to_string(W.rows()) + "x" + std::to_string(W.cols()) +
                      " but features have " + std::to_string(x1.size()) + " entries");
  Eigen::Map<const Eigen::VectorXd> v1(x1.data(), d), v2(x2.data(), d);
  return v2.dot(W * v1);
}

double reid_probability(const ArchiveStore& store, const Tracklet& a, const Tracklet& b, const ReIdModel& model) {
  if (a.observations.empty() || b.observations.empty()) throw DataError("re-id on an empty tracklet");
  const bool a_first = a.t_start < b.t_start || (a.t_start == b.t_start && a.track_id <= b.track_id);
  const auto xa = tracklet_features(store, a);
  const auto xb = tracklet_features(store, b);
  const double score = a_first ? reid_score(model.W, xa, xb) : reid_score(model.W, xb, xa);
  return clamp_probability(margin_to_probability(score, model.platt));
}

TrackFeatureTable build_track_features(const ArchiveStore& store) {
  TrackFeatureTable table;
  table.reserve(store.tracklets().size());
  for (const auto& tr : store.tracklets()) table.emplace(tr.track_id, TrackSummary{tr.t_start, tracklet_features(store, tr)});
  return table;
}

// ---- model bundle ---------------------------------------------------------

void CalibrationModel::check_covers_vocabulary() const {
  for (auto c : all_classes())
    if (!class_models.count(std::string(to_string(c))))
      throw ConfigError("model bundle lacks class concept '" + std::string(to_string(c)) + "'");
  for (const auto& a : attribute_vocabulary())
    if (!attr_models.count(a)) throw ConfigError("model bundle lacks attribute concept '" + a + "'");
  for (const char* r : {"near", "not_near"})
    if (!rel_models.count(r)) throw ConfigError(std::string("model bundle lacks relationship concept '") + r + "'");
  const auto d = static_cast<Eigen::Index>(tracklet_feature_names().size());
  if (reid.W.rows() != d || reid.W.cols() != d) throw ConfigError("re-id matrix has the wrong dimension");
}

NodeScorer::NodeScorer(const QueryNode& node, const CalibrationModel& models) {
  auto add = [&](const std::map<std::string, LinearConcept>& table, const std::string& key, const char* kind) {
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError(std::string("no ") + kind + " model for '" + key + "'");
    const LinearConcept& c = it->second;
    if (c.feature_spec.size() != 1) throw ConfigError("node concept " + key + " must read exactly one margin");
    const std::string& spec = c.feature_spec.front();
    Factor f{&c, nullptr, {}};
    if (spec.rfind("class_margin:", 0) == 0) {
      f.margins = &Observation::class_margins;
      f.key = spec.substr(13);
    } else if (spec.rfind("attr_margin:", 0) == 0) {
      f.margins = &Observation::attr_margins;
      f.key = spec.substr(12);
    } else {
      throw ConfigError("node concept " + key + ": unsupported feature '" + spec + "'");
    }
    factors_.push_back(std::move(f));
  };
  add(models.class_models, std::string(to_string(node.cls)), "class");
  for (const auto& a : node.attributes) add(models.attr_models, a, "attribute");
}

double NodeScorer::probability(const Observation& obs) const {
  double p = 1.0;
  for (const auto& f : factors_) {
    const auto& margins = obs.*(f.margins);
    auto it = margins.find(f.key);
    if (it == margins.end())
      throw DataError("observation " + std::to_string(obs.obs_id) + " has no margin for '" + f.key + "'");
    const double m = it->second;
    p *= f.model->probability(std::span<const double>(&m, 1));
  }
  return p;
}

double NodeScorer::log_probability(const Observation& obs) const {
  double s = 0.0;
  for (const auto& f : factors_) {
    const auto& margins = obs.*(f.margins);
    auto it = margins.find(f.key);
    if (it == margins.end())
      throw DataError("observation " + std::to_string(obs.obs_id) + " has no margin for '" + f.key + "'");
    const double m = it->second;
    s += std::log(f.model->probability(std::span<const double>(&m, 1)));
  }
  return s;
}

EdgeScorer::EdgeScorer(const RelationSet& relationships, const CalibrationModel& models, EdgeContext context)
    : relationships_(relationships), models_(&models), context_(context) {
  auto lookup = [&](const char* name) {
    auto it = models.rel_models.find(name);
    if (it == models.rel_models.end()) throw ConfigError(std::string("no relationship model for '") + name + "'");
    if (it->second.feature_spec != pair_feature_names())
      throw ConfigError(std::string("relationship model '") + name + "' does not use the pair feature layout");
    return &it->second;
  };
  if (relationships.count(Relationship::near)) near_ = lookup("near");
  if (relationships.count(Relationship::not_near)) not_near_ = lookup("not_near");
}

double EdgeScorer::factor(Relationship r, const Observation& a, const Observation& b, const PairFeatures* pf) const {
  // An observation never relates to itself.
  if (a.obs_id == b.obs_id) return kProbabilityFloor;
  switch (r) {
    case Relationship::later: {
      const double gap = b.time - a.time;
      const auto& cfg = models_->later;
      return clamp_probability(gap >= cfg.gap_min && gap <= cfg.gap_max ? cfg.p_satisfied : 1.0 - cfg.p_satisfied);
    }
    case Relationship::near:
      return near_->probability(*pf);
    case Relationship::not_near:
      return not_near_->probability(*pf);
    case Relationship::same_entity: {
      if (a.track_id == b.track_id) return 1.0 - kProbabilityFloor;
      if (!context_.reid_enabled) return kProbabilityFloor;
      if (!context_.tracks) throw DataError("same_entity across tracks needs tracklet features");
      auto ia = context_.tracks->find(a.track_id);
      auto ib = context_.tracks->find(b.track_id);
      if (ia == context_.tracks->end() || ib == context_.tracks->end())
        throw DataError("same_entity: unknown track");
      const bool a_first = ia->second.t_start < ib->second.t_start ||
                           (ia->second.t_start == ib->second.t_start && a.track_id < b.track_id);
      const auto& x1 = a_first ? ia->second.features : ib->second.features;
      const auto& x2 = a_first ? ib->second.features : ia->second.features;
      return clamp_probability(margin_to_probability(reid_score(models_->reid.W, x1, x2), models_->reid.platt));
    }
  }
  return kProbabilityFloor;
}

std::vector<std::pair<Relationship, double>> EdgeScorer::factors(const Observation& a, const Observation& b) const {
  PairFeatures pf{};
  if (near_ || not_near_) pf = pair_features(a, b);
  std::vector<std::pair<Relationship, double>> out;
  for (auto r : relationships_) out.emplace_back(r, factor(r, a, b, &pf));
  return out;
}

double EdgeScorer::probability(const Observation& a, const Observation& b) const {
  PairFeatures pf{};
  if (near_ || not_near_) pf = pair_features(a, b);
  double p = 1.0;
  for (auto r : relationships_) p *= factor(r, a, b, &pf);
  return p;
}

double EdgeScorer::log_probability(const Observation& a, const Observation& b) const {
  PairFeatures pf{};
  if (near_ || not_near_) pf = pair_features(a, b);
  double s = 0.0;
  for (auto r : relationships_) s += std::log(factor(r, a, b, &pf));
  return s;
}

double node_probability(const QueryNode& node, const Observation& obs, const CalibrationModel& models) {
  return NodeScorer(node, models).probability(obs);
}

double edge_probability(const Observation& a, const Observation& b, const RelationSet& relationships,
                        const CalibrationModel& models, const EdgeContext& context) {
  return EdgeScorer(relationships, models, context).probability(a, b);
}

}  // namespace actgraph
