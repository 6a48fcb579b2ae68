#include "actgraph/service.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <regex>
#include <set>

#include "actgraph/error.hpp"

namespace actgraph {

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

HttpResponse ok(const json& doc) { return {200, doc.dump(), "application/json"}; }

json box_json(const Box& b) { return json{{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}}; }

json relationships_json(const RelationSet& rels) {
  json out = json::array();
  for (auto r : rels) out.push_back(std::string(to_string(r)));
  return out;
}

// Options parsed from the query body, in the form used for the request hash.
struct QueryRequest {
  ActivityGraph graph;
  RetrievalOptions options;
};

template <typename T>
T field_or(const json& body, const char* key, T fallback) {
  auto it = body.find(key);
  if (it == body.end() || it->is_null()) return fallback;
  return it->get<T>();
}

}  // namespace

HttpResponse error_response(int status, const std::string& error, const std::string& detail, json extra) {
  json doc{{"error", error}, {"detail", detail}};
  if (extra.is_object())
    for (auto& [key, value] : extra.items()) doc[key] = value;
  return {status, doc.dump(), "application/json"};
}

Service::Service(std::optional<ArchiveStore> archive, std::optional<ModelBundle> bundle, ServiceOptions options)
    : archive_(std::move(archive)), bundle_(std::move(bundle)), options_(std::move(options)) {
  if (options_.cache_size == 0) throw ConfigError("cache size must be positive");
  if (archive_) tracks_ = build_track_features(*archive_);
  if (archive_ && bundle_)
    freqs_ = archive_frequencies(*archive_, bundle_->models, options_.frequency_samples, options_.frequency_seed,
                                 EdgeContext{&tracks_, true});
}

HttpResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  static const std::regex grounding_route(R"(^/api/result/([^/]+)/grounding/([^/]+)$)");
  if (path == "/api/query") {
    if (method != "POST") return error_response(405, "method_not_allowed", method + " " + path);
    return post_query(body);
  }
  if (path == "/api/archive/summary" || path == "/api/health") {
    if (method != "GET") return error_response(405, "method_not_allowed", method + " " + path);
    return path == "/api/health" ? health() : archive_summary();
  }
  std::smatch m;
  if (std::regex_match(path, m, grounding_route)) {
    if (method != "GET") return error_response(405, "method_not_allowed", method + " " + path);
    return grounding_detail(m[1].str(), m[2].str());
  }
  return error_response(404, "not_found", path);
}

HttpResponse Service::post_query(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_response(400, "invalid_json", e.what());
  }
  if (!doc.is_object() || !doc.contains("query"))
    return error_response(400, "invalid_request", "body must be an object with a \"query\" field");

  QueryRequest req;
  try {
    req.options.eta = field_or(doc, "eta", req.options.eta);
    const auto k = field_or<std::int64_t>(doc, "k", static_cast<std::int64_t>(req.options.k));
    if (k <= 0) return error_response(400, "invalid_request", "k must be positive");
    req.options.k = static_cast<std::size_t>(k);
    req.options.refinement = field_or(doc, "refinement", req.options.refinement);
    req.options.max_rounds = field_or(doc, "max_rounds", req.options.max_rounds);
    req.options.decay = field_or(doc, "decay", req.options.decay);
    const auto top_r = field_or<std::int64_t>(doc, "top_r", static_cast<std::int64_t>(req.options.top_r));
    if (top_r <= 0) return error_response(400, "invalid_request", "top_r must be positive");
    req.options.top_r = static_cast<std::size_t>(top_r);
    req.options.reid = field_or(doc, "reid", req.options.reid);
  } catch (const json::exception& e) {
    return error_response(400, "invalid_request", e.what());
  }
  if (!(req.options.eta > 0.0 && req.options.eta <= 1.0))
    return error_response(400, "invalid_request", "eta must be in (0, 1]");
  if (!(req.options.decay > 0.0 && req.options.decay < 1.0))
    return error_response(400, "invalid_request", "decay must be in (0, 1)");
  if (req.options.max_rounds < 0) return error_response(400, "invalid_request", "max_rounds must be non-negative");

  try {
    req.graph = parse_activity_graph(doc.at("query").dump());
  } catch (const VocabularyError& e) {
    return error_response(400, "invalid_query", e.what(),
                          json{{"violations", json::array({e.what()})}, {"token", e.token()}});
  } catch (const ValidationError& e) {
    return error_response(400, "invalid_query", e.what(), json{{"violations", e.violations()}});
  } catch (const ParseError& e) {
    return error_response(400, "invalid_query", e.what(), json{{"violations", json::array({e.what()})}});
  }

  if (!archive_) return error_response(409, "no_archive", "no archive is loaded");
  if (!bundle_) return error_response(409, "no_models", "no model bundle is loaded");

  const json request_key{{"query", json::parse(serialize_activity_graph(req.graph))},
                         {"eta", req.options.eta},
                         {"k", req.options.k},
                         {"refinement", req.options.refinement},
                         {"max_rounds", req.options.max_rounds},
                         {"decay", req.options.decay},
                         {"top_r", req.options.top_r},
                         {"reid", req.options.reid}};
  const std::string id = checksum_hex(request_key.dump());

  auto stored = lookup(id);
  if (!stored) {
    RetrievalResult result;
    try {
      result = retrieve(req.graph, *archive_, *bundle_, *freqs_, req.options);
    } catch (const InfeasibleError& e) {
      return error_response(422, "infeasible", e.what());
    } catch (const ConfigError& e) {
      return error_response(422, "unsupported_query", e.what());
    } catch (const Error& e) {
      return error_response(500, "internal", e.what());
    }
    json out = to_json(result, req.graph);
    out["result_id"] = id;
    auto fresh = std::make_shared<StoredResult>();
    fresh->graph = req.graph;
    fresh->reid = req.options.reid;
    fresh->document = out.dump();
    fresh->result = std::move(result);
    stored = fresh;
    remember(id, stored);
  }

  json summary{{"result_id", id},
               {"returns", stored->result.ranked.size()},
               {"refinement_rounds", stored->result.refinement_rounds}};
  summary["top_score"] = stored->result.ranked.empty() ? json(nullptr) : json(stored->result.ranked.front().full_log_score);
  append_log({request_key.at("query"), req.options.eta, req.options.k, utc_timestamp(), std::move(summary)});
  return {200, stored->document, "application/json"};
}

HttpResponse Service::archive_summary() const {
  if (!archive_) return error_response(409, "no_archive", "no archive is loaded");
  json classes = json::object();
  for (auto c : all_classes()) classes[std::string(to_string(c))] = 0;
  std::size_t unlabelled = 0;
  for (const auto& obs : archive_->observations()) {
    const std::string* best = nullptr;
    double best_margin = -INFINITY;
    for (auto c : all_classes()) {
      auto it = obs.class_margins.find(std::string(to_string(c)));
      if (it != obs.class_margins.end() && it->second > best_margin) {
        best_margin = it->second;
        best = &it->first;
      }
    }
    if (best)
      classes[*best] = classes[*best].get<std::size_t>() + 1;
    else
      ++unlabelled;
  }
  json doc{{"observations", archive_->size()},
           {"classes", classes},
           {"unclassified", unlabelled},
           {"tracklets", archive_->tracklets().size()}};
  if (auto span = archive_->time_span())
    doc["time_span"] = {{"start", span->first}, {"end", span->second}};
  else
    doc["time_span"] = nullptr;
  doc["relationship_frequencies"] = freqs_ ? to_json(*freqs_) : json(nullptr);
  return ok(doc);
}

HttpResponse Service::grounding_detail(const std::string& result_id, const std::string& rank_text) const {
  auto stored = lookup(result_id);
  if (!stored) return error_response(404, "unknown_result", result_id);
  std::size_t rank = 0;
  try {
    std::size_t used = 0;
    const long long r = std::stoll(rank_text, &used);
    if (used != rank_text.size() || r < 1) throw std::invalid_argument(rank_text);
    rank = static_cast<std::size_t>(r);
  } catch (const std::exception&) {
    return error_response(404, "unknown_rank", rank_text);
  }
  const auto& ranked = stored->result.ranked;
  if (rank > ranked.size())
    return error_response(404, "unknown_rank", "rank " + rank_text + " of " + std::to_string(ranked.size()));

  const Grounding& g = ranked[rank - 1];
  const ActivityGraph& graph = stored->graph;
  const FactorBreakdown fb = explain(g, graph, bundle_->models, *archive_, EdgeContext{&tracks_, stored->reid});

  std::set<std::size_t> tree_edges(stored->result.tree.tree_edges.begin(), stored->result.tree.tree_edges.end());
  json nodes = json::array();
  for (const auto& [id, lp] : fb.node_log) nodes.push_back({{"node", id}, {"log_prob", lp}});
  json edges = json::array();
  for (std::size_t e = 0; e < graph.edges.size(); ++e)
    edges.push_back({{"a", graph.edges[e].a},
                     {"b", graph.edges[e].b},
                     {"relationships", relationships_json(graph.edges[e].relationships)},
                     {"log_prob", fb.edge_log[e]},
                     {"in_tree", tree_edges.count(e) > 0}});

  json mapping = json::object();
  json members = json::array();
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    mapping[graph.nodes[i].id] = g.mapping[i];
    const Observation& obs = archive_->by_id(g.mapping[i]);
    members.push_back({{"node", graph.nodes[i].id},
                       {"obs_id", obs.obs_id},
                       {"track_id", obs.track_id},
                       {"time", obs.time},
                       {"box", box_json(obs.box)}});
  }
  json doc{{"result_id", result_id},
           {"rank", rank},
           {"full_log_score", g.full_log_score},
           {"tree_log_score", g.tree_log_score},
           {"mapping", mapping},
           {"volume", to_json(g.volume)},
           {"factors", {{"nodes", nodes}, {"edges", edges}, {"total", fb.total}}},
           {"observations", members}};
  return ok(doc);
}

HttpResponse Service::health() const {
  return ok(json{{"status", "ok"},
                 {"archive_loaded", archive_.has_value()},
                 {"models_loaded", bundle_.has_value()},
                 {"observations", archive_ ? archive_->size() : 0}});
}

std::vector<QueryLogEntry> Service::query_log() const {
  std::lock_guard lock(log_mutex_);
  return log_;
}

std::shared_ptr<const Service::StoredResult> Service::lookup(const std::string& id) const {
  std::lock_guard lock(cache_mutex_);
  auto it = cache_.find(id);
  if (it == cache_.end()) return nullptr;
  lru_.splice(lru_.begin(), lru_, it->second.second);
  return it->second.first;
}

void Service::remember(const std::string& id, std::shared_ptr<const StoredResult> stored) {
  std::lock_guard lock(cache_mutex_);
  if (auto it = cache_.find(id); it != cache_.end()) {
    lru_.splice(lru_.begin(), lru_, it->second.second);
    return;
  }
  lru_.push_front(id);
  cache_.emplace(id, std::make_pair(std::move(stored), lru_.begin()));
  while (cache_.size() > options_.cache_size) {
    cache_.erase(lru_.back());
    lru_.pop_back();
  }
}

void Service::append_log(QueryLogEntry entry) {
  std::lock_guard lock(log_mutex_);
  if (!options_.query_log_path.empty()) {
    std::ofstream out(options_.query_log_path, std::ios::app);
    out << json{{"query", entry.query},
                {"eta", entry.eta},
                {"k", entry.k},
                {"timestamp", entry.timestamp},
                {"summary", entry.summary}}
               .dump()
        << '\n';
  }
  log_.push_back(std::move(entry));
}

bool Service::serve(const std::string& host, int port) {
  httplib::Server server;
  if (!options_.static_dir.empty() && !server.set_mount_point("/", options_.static_dir))
    throw DataError("static directory not found: " + options_.static_dir);
  auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    HttpResponse r;
    try {
      r = handle(req.method, req.path, req.body);
    } catch (const std::exception& e) {
      r = error_response(500, "internal", e.what());
    }
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get(".*", dispatch);
  server.Post(".*", dispatch);
  server.Put(".*", dispatch);
  server.Delete(".*", dispatch);
  return server.listen(host, port);
}

}  // namespace actgraph
