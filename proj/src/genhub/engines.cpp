#include <httplib.h>

#include <chrono>
#include <fstream>
#include <set>
#include <thread>

#include "needle/common/base64.hpp"
#include "needle/common/error.hpp"
#include "needle/common/url.hpp"
#include "needle/genhub/hub.hpp"
#include "needle/genhub/scene.hpp"

namespace needle::genhub {

using json = nlohmann::json;

namespace {

class MockEngine final : public Engine {
 public:
  explicit MockEngine(const EngineSpec& spec)
      : fail_(spec.params.value("fail", false)), latencyMs_(spec.params.value("latency_ms", 0)) {}

  std::vector<ImagePixels> generate(const GenRequest& req, std::span<const uint64_t> seeds) override {
    if (latencyMs_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(latencyMs_));
    if (fail_) fail(Errc::HttpError, "mock engine configured to fail");
    auto scene = parsePrompt(req.prompt);
    std::vector<ImagePixels> out;
    out.reserve(seeds.size());
    for (auto s : seeds) out.push_back(mockRender(scene, s, req.resolution));
    return out;
  }

 private:
  bool fail_;
  int latencyMs_;
};

class RemoteEngine final : public Engine {
 public:
  explicit RemoteEngine(const EngineSpec& spec)
      : url_(parseHttpUrl(spec.params.value("endpoint", std::string()))),
        timeoutMs_(spec.params.value("timeout_ms", 10000)) {}

  std::vector<ImagePixels> generate(const GenRequest& req, std::span<const uint64_t> seeds) override {
    json body{{"prompt", req.prompt}, {"m", req.m}, {"resolution", req.resolution}, {"seed", seeds.front()}};
    httplib::Client cli(url_.origin);
    auto ms = std::chrono::milliseconds(timeoutMs_);
    cli.set_connection_timeout(ms);
    cli.set_read_timeout(ms);
    cli.set_write_timeout(ms);
    auto res = cli.Post(url_.path, body.dump(), "application/json");
    if (!res) {
      auto err = res.error();
      if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout || err == httplib::Error::Write) {
        fail(Errc::Timeout, "no response within " + std::to_string(timeoutMs_) + " ms (" + httplib::to_string(err) + ")");
      }
      fail(Errc::HttpError, httplib::to_string(err));
    }
    if (res->status != 200) fail(Errc::HttpError, "status " + std::to_string(res->status));
    std::vector<ImagePixels> out;
    try {
      auto doc = json::parse(res->body);
      for (const auto& b64 : doc.at("images")) out.push_back(decodeImage(base64Decode(b64.get<std::string>())));
    } catch (const json::exception& e) {
      fail(Errc::BadResponse, std::string("malformed body: ") + e.what());
    } catch (const Error& e) {
      fail(Errc::BadResponse, e.what());
    }
    return out;
  }

 private:
  HttpUrl url_;
  int timeoutMs_;
};

const std::set<std::string> kKeys = {"name", "kind", "priority", "enabled", "params"};

}  // namespace

std::unique_ptr<Engine> makeMockEngine(const EngineSpec& spec) { return std::make_unique<MockEngine>(spec); }
std::unique_ptr<Engine> makeRemoteEngine(const EngineSpec& spec) { return std::make_unique<RemoteEngine>(spec); }

std::unique_ptr<Engine> makeEngine(const EngineSpec& spec) {
  if (spec.kind == "mock") return makeMockEngine(spec);
  if (spec.kind == "remote") return makeRemoteEngine(spec);
  fail(Errc::InvalidArgument, "engine " + spec.name + ": unknown kind '" + spec.kind + "'");
}

std::vector<EngineSpec> parseGenerators(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(Errc::ParseError, std::string("generators.json: ") + e.what());
  }
  if (!doc.is_array()) fail(Errc::ParseError, "generators.json: top level must be an array");
  std::vector<EngineSpec> out;
  std::set<std::string> names;
  for (size_t i = 0; i < doc.size(); ++i) {
    const auto& el = doc[i];
    auto where = "generators.json entry " + std::to_string(i) + ": ";
    if (!el.is_object()) fail(Errc::ParseError, where + "expected an object");
    for (const auto& [k, _] : el.items())
      if (!kKeys.count(k)) fail(Errc::ParseError, where + "unknown key '" + k + "'");
    EngineSpec s;
    if (!el.contains("name") || !el["name"].is_string() || el["name"].get<std::string>().empty())
      fail(Errc::ParseError, where + "field 'name': expected a non-empty string");
    s.name = el["name"];
    if (!el.contains("kind") || !el["kind"].is_string()) fail(Errc::ParseError, where + "field 'kind': expected a string");
    s.kind = el["kind"];
    if (s.kind != "mock" && s.kind != "remote") fail(Errc::ParseError, where + "field 'kind': must be mock or remote");
    if (el.contains("priority")) {
      if (!el["priority"].is_number_integer()) fail(Errc::ParseError, where + "field 'priority': expected an integer");
      s.priority = el["priority"];
    }
    if (el.contains("enabled")) {
      if (!el["enabled"].is_boolean()) fail(Errc::ParseError, where + "field 'enabled': expected true or false");
      s.enabled = el["enabled"];
    }
    if (el.contains("params")) {
      if (!el["params"].is_object()) fail(Errc::ParseError, where + "field 'params': expected an object");
      s.params = el["params"];
    }
    if (s.kind == "remote") {
      if (!s.params.contains("endpoint") || !s.params["endpoint"].is_string())
        fail(Errc::ParseError, where + "remote engines need params.endpoint");
      try {
        parseHttpUrl(s.params["endpoint"]);
      } catch (const Error& e) {
        fail(Errc::ParseError, where + "params.endpoint: " + e.detail());
      }
    }
    if (s.params.contains("timeout_ms") &&
        (!s.params["timeout_ms"].is_number_integer() || s.params["timeout_ms"].get<int64_t>() <= 0))
      fail(Errc::ParseError, where + "params.timeout_ms: expected a positive integer");
    if (!names.insert(s.name).second) fail(Errc::DuplicateName, "engine '" + s.name + "' repeats");
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<EngineSpec> loadGenerators(const std::filesystem::path& path) {
  auto bytes = readFileBytes(path);
  return parseGenerators(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string dumpGenerators(const std::vector<EngineSpec>& specs) {
  json arr = json::array();
  for (const auto& s : specs) {
    arr.push_back(
        json{{"name", s.name}, {"kind", s.kind}, {"priority", s.priority}, {"enabled", s.enabled}, {"params", s.params}});
  }
  return arr.dump(2) + "\n";
}

void saveGenerators(const std::filesystem::path& path, const std::vector<EngineSpec>& specs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << dumpGenerators(specs);
    if (!out) fail(Errc::Io, "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<EngineSpec> defaultGenerators() { return {EngineSpec{"mock", "mock", 100, true, json::object()}}; }

}  // namespace needle::genhub
