#pragma once

// nlohmann/json bindings for the query document. Kept out of querymodel.hpp so
// that only translation units doing I/O pull in the JSON header.

#include <json.hpp>

#include "actgraph/querymodel.hpp"

namespace actgraph {

using json = nlohmann::json;

ActivityGraph activity_graph_from_json(const json& doc);
json to_json(const ActivityGraph& graph);

// Reads a whole file; throws DataError when it cannot be opened.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);
json read_json_file(const std::string& path);

}  // namespace actgraph
