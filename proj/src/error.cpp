#include "actgraph/error.hpp"

namespace actgraph {

ValidationError::ValidationError(std::vector<std::string> violations)
    : Error(join_violations(violations)), violations_(std::move(violations)) {}

std::string ValidationError::join_violations(const std::vector<std::string>& v) {
  std::string out = "invalid activity graph";
  for (const auto& s : v) {
    out += "; ";
    out += s;
  }
  return out;
}

}  // namespace actgraph
