#include "needle/api/wire.hpp"

#include <cmath>
#include <cstdio>

#include "needle/common/version.hpp"
#include "needle/genhub/scene.hpp"

namespace needle::api {

namespace {

std::string_view stateWord(bool up) { return up ? "up" : "down"; }

json engineJson(const EngineView& e) {
  const auto& s = e.status;
  return {{"name", s.spec.name},
          {"kind", s.spec.kind},
          {"priority", s.spec.priority},
          {"enabled", s.spec.enabled},
          {"healthy", e.healthy()},
          {"degraded", s.degraded},
          {"consecutiveFailures", s.consecutiveFailures},
          {"lastError", s.lastError}};
}

template <typename T>
T field(const json& body, const char* key, const char* what) {
  try {
    return body.at(key).get<T>();
  } catch (const json::exception&) {
    fail(Errc::InvalidArgument, std::string("field '") + key + "' must be " + what);
  }
}

uint32_t positive(const json& v, const char* key) {
  if (!v.is_number_integer() || v.get<int64_t>() < 1 || v.get<int64_t>() > 1'000'000) {
    fail(Errc::InvalidArgument, std::string("field '") + key + "' must be a positive integer");
  }
  return static_cast<uint32_t>(v.get<int64_t>());
}

}  // namespace

double wireScore(double score) {
  if (score == 0 || !std::isfinite(score)) return score;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", score);
  return std::strtod(buf, nullptr);
}

json toJson(const QueryOutcome& q) {
  json results = json::array();
  for (size_t i = 0; i < q.result.results.size(); ++i) {
    const auto& h = q.result.results[i];
    auto path = q.paths.find(h.id);
    results.push_back({{"rank", i + 1},
                       {"id", h.id},
                       {"score", wireScore(h.score)},
                       {"path", path == q.paths.end() ? "" : path->second},
                       {"url", "/v1/images/" + std::to_string(h.id)}});
  }
  json guides = json::array();
  for (const auto& g : q.result.guides) {
    guides.push_back({{"id", g.image.id},
                      {"engine", g.image.engineName},
                      {"seed", g.image.seed},
                      {"kept", g.kept},
                      {"lof", g.lof},
                      {"url", "/v1/images/" + g.image.id}});
  }
  json sources = json::array();
  for (const auto& s : q.result.sources) {
    json hits = json::array();
    for (const auto& h : s.hits) {
      json hit = {{"id", h.id}, {"distance", h.distance}};
      if (auto p = q.paths.find(h.id); p != q.paths.end()) hit["path"] = p->second;
      hits.push_back(std::move(hit));
    }
    sources.push_back({{"guide", s.guideId},
                       {"guideIndex", s.guideIndex},
                       {"embedder", s.embedder},
                       {"kept", s.kept},
                       {"hits", std::move(hits)}});
  }
  const auto& t = q.result.timings;
  return {{"plan",
           {{"m", q.plan.m},
            {"k", q.plan.k},
            {"n", q.plan.n},
            {"kappa", q.plan.kappa},
            {"resolution", q.plan.resolution},
            {"embedders", q.embedders}}},
          {"results", std::move(results)},
          {"guides", std::move(guides)},
          {"sources", std::move(sources)},
          {"timings",
           {{"generateMs", t.generateMs}, {"searchMs", t.searchMs}, {"fuseMs", t.fuseMs}, {"totalMs", t.totalMs}}}};
}

json toJson(const DirectoryInfo& d) {
  return {{"id", d.entry.id},
          {"path", d.entry.path},
          {"enabled", d.entry.enabled},
          {"createdAt", d.entry.createdAt},
          {"imageCount", d.entry.imageCount},
          {"indexed", d.progress.done},
          {"total", d.progress.total},
          {"progress", d.progress.ratio()}};
}

json toJson(const GeneratorConfig& g) {
  json engines = json::array();
  for (const auto& e : g.engines) engines.push_back(engineJson(e));
  return {{"revision", g.revision}, {"engines", std::move(engines)}};
}

json versionJson() { return {{"backend", buildVersion()}, {"ui", buildVersion()}}; }

json toJson(const StatusReport& s) {
  json services = json::object();
  for (const auto& [name, up] : s.services) services[name] = stateWord(up);
  json dirs = json::array();
  for (const auto& d : s.directories) dirs.push_back(toJson(d));
  json gens = json::array();
  for (const auto& e : s.generators) gens.push_back(engineJson(e));
  return {{"apiHealthy", s.apiHealthy},
          {"services", std::move(services)},
          {"directories", std::move(dirs)},
          {"generators", std::move(gens)},
          {"versions", {{"backend", s.backendVersion}, {"ui", s.uiVersion}}},
          {"mode", modeName(s.mode)},
          {"embedders", s.embedders}};
}

int httpStatusFor(Errc code) {
  switch (code) {
    case Errc::InvalidArgument:
    case Errc::PathNotFound:
    case Errc::NotADirectory:
    case Errc::PermissionDenied:
    case Errc::ParseError:
      return 400;
    case Errc::UnknownDirectory:
    case Errc::NotFound:
      return 404;
    case Errc::Conflict:
      return 409;
    case Errc::AllEnginesFailed:
    case Errc::NoEnabledEngines:
    case Errc::EmbedderUnavailable:
      return 503;
    default:
      return 500;
  }
}

json errorJson(const std::exception& e) {
  json err;
  if (auto* ne = dynamic_cast<const Error*>(&e)) {
    err = {{"code", errcName(ne->code())}, {"message", ne->detail()}};
    if (auto* fe = dynamic_cast<const genhub::EnginesFailedError*>(&e)) {
      json causes = json::array();
      for (const auto& [engine, why] : fe->causes()) causes.push_back({{"engine", engine}, {"error", why}});
      err["causes"] = std::move(causes);
    }
  } else {
    err = {{"code", "Internal"}, {"message", e.what()}};
  }
  return {{"error", std::move(err)}};
}

QueryRequest parseQueryRequest(const json& body) {
  if (!body.is_object()) fail(Errc::InvalidArgument, "body must be an object");
  QueryRequest r;
  r.prompt = field<std::string>(body, "prompt", "a string");
  if (body.contains("n")) r.n = positive(body["n"], "n");
  if (body.contains("seed")) r.seed = field<uint64_t>(body, "seed", "an unsigned integer");
  if (body.contains("overrides")) {
    const auto& o = body["overrides"];
    if (!o.is_object()) fail(Errc::InvalidArgument, "overrides must be an object");
    for (auto it = o.begin(); it != o.end(); ++it) {
      if (it.key() != "m" && it.key() != "resolution" && it.key() != "engines") {
        fail(Errc::InvalidArgument, "unknown override '" + it.key() + "'");
      }
    }
    if (o.contains("m")) r.m = positive(o["m"], "m");
    if (o.contains("resolution")) {
      const auto& res = o["resolution"];
      if (res.is_string()) {
        auto side = genhub::tryResolutionSide(res.get<std::string>());
        if (!side) fail(Errc::InvalidArgument, "resolution must be SMALL, MEDIUM or LARGE");
        r.resolution = *side;
      } else {
        r.resolution = positive(res, "resolution");
      }
    }
    if (o.contains("engines")) r.engines = field<std::vector<std::string>>(o, "engines", "a list of names");
  }
  return r;
}

GeneratorPatch parseGeneratorPatch(const json& body) {
  if (!body.is_object()) fail(Errc::InvalidArgument, "body must be an object");
  GeneratorPatch p;
  for (auto it = body.begin(); it != body.end(); ++it) {
    if (it.key() != "revision" && it.key() != "orderedNames" && it.key() != "perEngine") {
      fail(Errc::InvalidArgument, "unknown field '" + it.key() + "'");
    }
  }
  if (body.contains("revision")) p.revision = field<std::string>(body, "revision", "a string");
  if (body.contains("orderedNames")) {
    p.orderedNames = field<std::vector<std::string>>(body, "orderedNames", "a list of names");
  }
  if (body.contains("perEngine")) {
    const auto& pe = body["perEngine"];
    if (!pe.is_object()) fail(Errc::InvalidArgument, "perEngine must be an object");
    for (auto it = pe.begin(); it != pe.end(); ++it) {
      if (!it.value().is_object() || !it.value().contains("enabled") || !it.value()["enabled"].is_boolean()) {
        fail(Errc::InvalidArgument, "perEngine." + it.key() + " must be {\"enabled\": bool}");
      }
      p.enabled[it.key()] = it.value()["enabled"].get<bool>();
    }
  }
  if (!p.orderedNames && p.enabled.empty()) fail(Errc::InvalidArgument, "nothing to change");
  return p;
}

}  // namespace needle::api
