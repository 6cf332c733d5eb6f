#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include "needle/catalog/catalog.hpp"
#include "needle/common/settings.hpp"
#include "needle/embedders/embedder.hpp"
#include "needle/fusion/fusion.hpp"
#include "needle/genhub/hub.hpp"
#include "needle/ingest/ingest.hpp"
#include "needle/vecstore/store.hpp"

namespace needle::api {

struct BackendOptions {
  Settings settings;
  bool watch = true;
  bool reconcileOnStart = true;
  size_t queryConcurrency = 8;
  genhub::HubOptions hub;
};

// Defaults a mode puts on every query before request overrides.
struct ModeProfile {
  size_t embedderCount = 2;  // first N enabled registry entries
  uint32_t m = 1;
  uint32_t resolution = 512;
};
ModeProfile modeProfile(Mode mode);

struct QueryRequest {
  std::string prompt;
  uint32_t n = 10;
  std::optional<uint32_t> m;
  std::optional<uint32_t> resolution;
  std::vector<std::string> engines;
  std::optional<uint64_t> seed;
};

struct QueryOutcome {
  fusion::QueryPlan plan;
  std::vector<std::string> embedders;
  fusion::QueryResult result;
  std::map<uint64_t, std::string> paths;  // results and top-n source hits -> absolute path
};

struct DirectoryInfo {
  catalog::DirectoryEntry entry;
  catalog::Progress progress;
};

struct EngineView {
  genhub::EngineStatus status;
  bool healthy() const { return status.spec.enabled && !status.degraded; }
};

struct GeneratorConfig {
  std::string revision;
  std::vector<EngineView> engines;  // priority order
};

struct GeneratorPatch {
  std::optional<std::string> revision;
  std::optional<std::vector<std::string>> orderedNames;
  std::map<std::string, bool> enabled;
};

struct StatusReport {
  bool apiHealthy = true;
  std::map<std::string, bool> services;
  std::vector<DirectoryInfo> directories;
  std::vector<EngineView> generators;
  std::string backendVersion;
  std::string uiVersion;
  Mode mode = Mode::Fast;
  std::vector<std::string> embedders;
};

struct StoredImage {
  std::string contentType;
  std::vector<uint8_t> bytes;
};

// Everything the service process owns: catalog, vector store, embedders,
// generator hub and the indexer, plus the periodic reconcile loop.
class Backend {
 public:
  explicit Backend(BackendOptions opts);
  ~Backend();
  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  void start();
  void stop();

  // Errors: InvalidArgument, NoEnabledEngines, AllEnginesFailed.
  QueryOutcome query(const QueryRequest& req);

  // Conflict when the canonical path is registered already.
  DirectoryInfo addDirectory(const std::filesystem::path& path);
  std::vector<DirectoryInfo> directories() const;
  DirectoryInfo directory(catalog::DirectoryId id) const;  // UnknownDirectory
  DirectoryInfo setDirectoryEnabled(catalog::DirectoryId id, bool enabled);
  void removeDirectory(catalog::DirectoryId id);

  GeneratorConfig generators() const;
  // Conflict on a stale revision; InvalidArgument on unknown or missing names.
  // Persists to generators.json before returning.
  GeneratorConfig patchGenerators(const GeneratorPatch& patch);

  StatusReport status() const;

  // Guide images by id ("g..."), corpus images by numeric id. NotFound otherwise.
  StoredImage image(const std::string& id) const;

  ingest::ReconcileReport reconcileNow();
  bool waitIndexed(std::chrono::milliseconds timeout) { return indexer_->waitIdle(timeout); }

  Mode mode() const noexcept { return mode_; }
  const std::vector<embedders::EmbedderSpec>& activeEmbedders() const noexcept { return activeSpecs_; }
  vecstore::VectorStore& vectorStore() { return *store_; }
  catalog::Catalog& catalog() { return *catalog_; }
  genhub::GeneratorHub& hub() { return *hub_; }

 private:
  void reconcileLoop();
  void rememberGuides(const std::vector<fusion::GuideInfo>& guides);
  std::string revisionLocked() const;

  BackendOptions opts_;
  Mode mode_ = Mode::Fast;
  std::vector<embedders::EmbedderSpec> activeSpecs_;
  std::unique_ptr<catalog::Catalog> catalog_;
  std::unique_ptr<vecstore::VectorStore> store_;
  std::vector<std::unique_ptr<embedders::Embedder>> embedders_;
  std::unique_ptr<genhub::GeneratorHub> hub_;
  std::unique_ptr<ingest::Indexer> indexer_;

  std::counting_semaphore<1024> querySlots_;
  mutable std::mutex genMu_;  // generators.json read-modify-write

  mutable std::mutex guideMu_;
  std::list<std::pair<std::string, std::vector<uint8_t>>> guides_;  // most recent first, PNG bytes
  static constexpr size_t kGuideCache = 256;

  std::mutex loopMu_;
  std::condition_variable loopCv_;
  bool loopStop_ = true;
  std::thread reconciler_;
  std::atomic<bool> started_{false};
};

}  // namespace needle::api
