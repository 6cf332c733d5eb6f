#pragma once

#include <json.hpp>
#include <string>

#include "needle/api/backend.hpp"
#include "needle/common/error.hpp"

namespace needle::api {

using nlohmann::json;

// Scores travel as decimals with 9 significant digits.
double wireScore(double score);

json toJson(const QueryOutcome& q);
json toJson(const DirectoryInfo& d);
json toJson(const GeneratorConfig& g);
json toJson(const StatusReport& s);
json versionJson();

// {"error": {"code", "message", "causes"?}}
json errorJson(const std::exception& e);
int httpStatusFor(Errc code);

// Throws InvalidArgument on malformed bodies.
QueryRequest parseQueryRequest(const json& body);
GeneratorPatch parseGeneratorPatch(const json& body);

}  // namespace needle::api
