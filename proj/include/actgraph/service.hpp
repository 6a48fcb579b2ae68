#pragma once

#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "actgraph/archive_store.hpp"
#include "actgraph/concepts.hpp"
#include "actgraph/json_io.hpp"
#include "actgraph/matcher.hpp"
#include "actgraph/model_bundle.hpp"

namespace actgraph {

struct ServiceOptions {
  std::size_t cache_size = 64;
  std::size_t frequency_samples = kDefaultFrequencySamples;
  std::uint64_t frequency_seed = 0;
  std::string query_log_path;  // JSONL; empty keeps the log in memory only
  std::string static_dir;      // served under "/" when set
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

struct QueryLogEntry {
  json query;
  double eta = 0.0;
  std::size_t k = 0;
  std::string timestamp;  // UTC, ISO 8601
  json summary;
};

// Request handling independent of the HTTP transport. Archive and models are
// fixed at construction; only the result cache and the query log change.
class Service {
 public:
  Service(std::optional<ArchiveStore> archive, std::optional<ModelBundle> bundle, ServiceOptions options = {});

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body = {});

  HttpResponse post_query(const std::string& body);
  HttpResponse archive_summary() const;
  HttpResponse grounding_detail(const std::string& result_id, const std::string& rank) const;
  HttpResponse health() const;

  std::vector<QueryLogEntry> query_log() const;
  const ServiceOptions& options() const { return options_; }

  // Blocks until the server stops. Returns false if the address cannot be bound.
  bool serve(const std::string& host, int port);

 private:
  struct StoredResult {
    ActivityGraph graph;
    RetrievalResult result;
    bool reid = true;
    std::string document;
  };

  std::shared_ptr<const StoredResult> lookup(const std::string& id) const;
  void remember(const std::string& id, std::shared_ptr<const StoredResult> stored);
  void append_log(QueryLogEntry entry);

  std::optional<ArchiveStore> archive_;
  std::optional<ModelBundle> bundle_;
  ServiceOptions options_;
  std::optional<RelFreqTable> freqs_;
  TrackFeatureTable tracks_;

  mutable std::mutex cache_mutex_;
  mutable std::list<std::string> lru_;  // most recent first
  mutable std::unordered_map<std::string, std::pair<std::shared_ptr<const StoredResult>, std::list<std::string>::iterator>>
      cache_;

  mutable std::mutex log_mutex_;
  std::vector<QueryLogEntry> log_;
};

HttpResponse error_response(int status, const std::string& error, const std::string& detail, json extra = {});

}  // namespace actgraph
