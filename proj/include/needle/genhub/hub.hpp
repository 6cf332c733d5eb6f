#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "needle/common/error.hpp"
#include "needle/common/image.hpp"

namespace needle::genhub {

struct GenRequest {
  std::string prompt;
  uint32_t m = 1;
  uint32_t resolution = 512;
  std::optional<uint64_t> seed;
  std::vector<std::string> engines;  // restricts routing to these names; empty means all
};

struct GuideImage {
  std::string id;
  std::string engineName;
  uint64_t seed = 0;
  ImagePixels pixels;
  std::string promptEcho;
};

struct EngineSpec {
  std::string name;
  std::string kind;  // "mock" | "remote"
  int priority = 0;  // lower is tried first, ties by name
  bool enabled = true;
  // mock: fail (bool), latency_ms (int). remote: endpoint (url), timeout_ms (int, default 10000).
  nlohmann::json params = nlohmann::json::object();

  bool operator==(const EngineSpec&) const = default;
};

// One image-producing backend. `seeds` has one entry per requested image.
class Engine {
 public:
  virtual ~Engine() = default;
  virtual std::vector<ImagePixels> generate(const GenRequest& req, std::span<const uint64_t> seeds) = 0;
};

// Procedural renderer over parsePrompt. Throws HttpError when params.fail is
// set, to stand in for a broken backend.
std::unique_ptr<Engine> makeMockEngine(const EngineSpec& spec);

// POST <endpoint> {"prompt", "m", "resolution", "seed"} answered by
// {"images": [base64 PNG, ...]}. Errors: Timeout, HttpError, BadResponse.
std::unique_ptr<Engine> makeRemoteEngine(const EngineSpec& spec);

std::unique_ptr<Engine> makeEngine(const EngineSpec& spec);

std::vector<EngineSpec> parseGenerators(std::string_view text);
std::vector<EngineSpec> loadGenerators(const std::filesystem::path& path);
std::string dumpGenerators(const std::vector<EngineSpec>& specs);
void saveGenerators(const std::filesystem::path& path, const std::vector<EngineSpec>& specs);
std::vector<EngineSpec> defaultGenerators();

struct EngineStatus {
  EngineSpec spec;
  bool degraded = false;
  int consecutiveFailures = 0;
  std::string lastError;
};

// AllEnginesFailed with each engine's cause in the order tried, or
// NoEnabledEngines with the reason each engine was skipped.
class EnginesFailedError : public Error {
 public:
  EnginesFailedError(Errc code, std::vector<std::pair<std::string, std::string>> causes);
  const std::vector<std::pair<std::string, std::string>>& causes() const noexcept { return causes_; }

 private:
  std::vector<std::pair<std::string, std::string>> causes_;
};

struct HubOptions {
  int degradeAfter = 3;
  std::chrono::milliseconds backoff{60000};
  int maxInFlightPerEngine = 4;
  std::function<std::chrono::steady_clock::time_point()> now = [] { return std::chrono::steady_clock::now(); };
};

// Routes each request to engines in (priority, name) order. A whole request
// goes to one engine; on any failure the next engine gets the full request.
// Engines that failed `degradeAfter` consecutive requests are tried last
// until their backoff expires.
class GeneratorHub {
 public:
  explicit GeneratorHub(std::vector<EngineSpec> specs, HubOptions opts = {});
  ~GeneratorHub();

  // Throws NoEnabledEngines, or AllEnginesFailed listing each engine's cause.
  // InvalidArgument when req.engines names an unknown engine.
  std::vector<GuideImage> generate(const GenRequest& req);

  void setEngines(std::vector<EngineSpec> specs);
  std::vector<EngineSpec> engines() const;
  std::vector<EngineStatus> status() const;

 private:
  struct Slot;
  std::vector<std::shared_ptr<Slot>> orderedSlots() const;

  HubOptions opts_;
  mutable std::mutex mu_;
  std::vector<std::shared_ptr<Slot>> slots_;
};

std::string guideId(const std::string& engine, const std::string& prompt, uint32_t resolution, uint64_t seed);

}  // namespace needle::genhub
