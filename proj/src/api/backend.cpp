#include "needle/api/backend.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <spdlog/spdlog.h>

#include "needle/common/error.hpp"
#include "needle/common/hash.hpp"
#include "needle/common/version.hpp"
#include "needle/genhub/scene.hpp"

namespace fs = std::filesystem;

namespace needle::api {

namespace {

constexpr uint32_t kMaxGuides = 16;

Mode pinMode(const Settings& s) {
  // The mode decides which collections exist, so the first value seen for a
  // data directory sticks.
  auto path = s.modePath();
  std::ifstream in(path);
  std::string text;
  if (in && std::getline(in, text) && !text.empty()) {
    Mode stored = parseMode(text);
    if (stored != s.mode) {
      spdlog::warn("data directory is pinned to mode '{}', ignoring '{}'", modeName(stored), modeName(s.mode));
    }
    return stored;
  }
  std::ofstream(path) << modeName(s.mode) << "\n";
  return s.mode;
}

std::string contentTypeFor(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" ? "image/png" : "image/jpeg";
}

}  // namespace

ModeProfile modeProfile(Mode mode) {
  switch (mode) {
    case Mode::Fast: return {2, 1, 512};
    case Mode::Balanced: return {4, 2, 512};
    case Mode::Accurate: return {6, 2, 512};
  }
  return {};
}

Backend::Backend(BackendOptions opts) : opts_(std::move(opts)), querySlots_(0) {
  if (opts_.queryConcurrency == 0 || opts_.queryConcurrency > 1024) {
    fail(Errc::InvalidArgument, "query concurrency must be in [1, 1024]");
  }
  const auto& s = opts_.settings;
  fs::create_directories(s.dataDir);
  mode_ = pinMode(s);

  if (!fs::exists(s.embeddersPath())) embedders::saveRegistry(s.embeddersPath(), embedders::builtinRegistry());
  if (!fs::exists(s.generatorsPath())) genhub::saveGenerators(s.generatorsPath(), genhub::defaultGenerators());

  auto registry = embedders::loadRegistry(s.embeddersPath());
  size_t want = modeProfile(mode_).embedderCount;
  for (const auto& spec : registry) {
    if (spec.enabled && activeSpecs_.size() < want) activeSpecs_.push_back(spec);
  }
  if (activeSpecs_.empty()) fail(Errc::InvalidArgument, "embedders.json enables no embedder");

  catalog_ = std::make_unique<catalog::Catalog>(s.catalogPath());
  store_ = std::make_unique<vecstore::VectorStore>(s.vectorsDir());
  embedders::ensureCollections(activeSpecs_, *store_);
  std::vector<const embedders::Embedder*> ptrs;
  for (const auto& spec : activeSpecs_) {
    embedders_.push_back(spec.isRemote() ? embedders::makeRemoteEmbedder(spec) : embedders::makeEmbedder(spec));
    ptrs.push_back(embedders_.back().get());
  }
  hub_ = std::make_unique<genhub::GeneratorHub>(genhub::loadGenerators(s.generatorsPath()), opts_.hub);

  ingest::IngestOptions io;
  io.workers = s.workers;
  io.batchSize = s.batchSize;
  io.watch = opts_.watch;
  indexer_ = std::make_unique<ingest::Indexer>(*catalog_, *store_, ptrs, io);
  querySlots_.release(static_cast<std::ptrdiff_t>(opts_.queryConcurrency));
}

Backend::~Backend() { stop(); }

void Backend::start() {
  if (started_.exchange(true)) return;
  store_->startFlushThread();
  indexer_->start();
  {
    std::lock_guard lock(loopMu_);
    loopStop_ = false;
  }
  reconciler_ = std::thread([this] { reconcileLoop(); });
}

void Backend::stop() {
  if (!started_.exchange(false)) return;
  {
    std::lock_guard lock(loopMu_);
    loopStop_ = true;
  }
  loopCv_.notify_all();
  if (reconciler_.joinable()) reconciler_.join();
  indexer_->stop();
  store_->stopFlushThread();
  store_->flushAll();
}

void Backend::reconcileLoop() {
  bool first = true;
  std::unique_lock lock(loopMu_);
  while (!loopStop_) {
    if (!first || opts_.reconcileOnStart) {
      lock.unlock();
      try {
        auto rep = indexer_->reconcile();
        spdlog::info("reconcile: added {} removed {} reembedded {} repaired {} skipped {}", rep.added, rep.removed,
                     rep.reembedded, rep.repaired, rep.skippedDirectories.size());
      } catch (const std::exception& e) {
        spdlog::error("reconcile failed: {}", e.what());
      }
      lock.lock();
    }
    first = false;
    loopCv_.wait_for(lock, std::chrono::minutes(opts_.settings.reconcileMinutes), [&] { return loopStop_; });
  }
}

ingest::ReconcileReport Backend::reconcileNow() { return indexer_->reconcile(); }

QueryOutcome Backend::query(const QueryRequest& req) {
  auto trimmed = req.prompt;
  trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
  if (trimmed.empty()) fail(Errc::InvalidArgument, "prompt must not be empty");
  if (req.n == 0) fail(Errc::InvalidArgument, "n must be >= 1");

  auto profile = modeProfile(mode_);
  QueryOutcome out;
  auto& plan = out.plan;
  plan.m = req.m.value_or(profile.m);
  plan.resolution = req.resolution.value_or(profile.resolution);
  plan.n = req.n;
  plan.k = std::max<uint32_t>(plan.k, req.n);
  plan.seed = req.seed;
  plan.engines = req.engines;
  if (plan.m == 0 || plan.m > kMaxGuides) fail(Errc::InvalidArgument, "m must be in [1, 16]");
  if (plan.resolution != 256 && plan.resolution != 512 && plan.resolution != 1024) {
    fail(Errc::InvalidArgument, "resolution must be 256, 512 or 1024");
  }

  std::vector<const embedders::Embedder*> ptrs;
  for (const auto& e : embedders_) {
    ptrs.push_back(e.get());
    out.embedders.push_back(e->spec().name);
  }

  querySlots_.acquire();
  try {
    out.result = fusion::runQuery(req.prompt, plan, {*hub_, ptrs, *store_});
  } catch (...) {
    querySlots_.release();
    throw;
  }
  querySlots_.release();

  rememberGuides(out.result.guides);
  std::map<catalog::DirectoryId, std::string> dirPaths;
  auto resolve = [&](uint64_t id) -> bool {
    if (out.paths.count(id)) return true;
    auto rec = catalog_->image(static_cast<catalog::ImageId>(id));
    if (!rec) return false;  // removed after the search ran
    auto& root = dirPaths[rec->directoryId];
    if (root.empty()) {
      auto d = catalog_->directory(rec->directoryId);
      if (!d) return false;
      root = d->path;
    }
    out.paths[id] = (fs::path(root) / rec->relativePath).string();
    return true;
  };
  std::vector<fusion::FusedHit> live;
  for (const auto& hit : out.result.results) {
    if (resolve(hit.id)) live.push_back(hit);
  }
  // Per-source lists are shown to depth n in verbose clients.
  for (const auto& src : out.result.sources) {
    for (size_t i = 0; i < src.hits.size() && i < plan.n; ++i) resolve(src.hits[i].id);
  }
  out.result.results = std::move(live);
  return out;
}

void Backend::rememberGuides(const std::vector<fusion::GuideInfo>& guides) {
  std::vector<std::pair<std::string, std::vector<uint8_t>>> encoded;
  for (const auto& g : guides) encoded.emplace_back(g.image.id, encodePng(g.image.pixels));
  std::lock_guard lock(guideMu_);
  for (auto& [id, png] : encoded) {
    guides_.remove_if([&](const auto& e) { return e.first == id; });
    guides_.emplace_front(id, std::move(png));
  }
  while (guides_.size() > kGuideCache) guides_.pop_back();
}

StoredImage Backend::image(const std::string& id) const {
  if (!id.empty() && id[0] == 'g') {
    std::lock_guard lock(guideMu_);
    for (const auto& [gid, png] : guides_) {
      if (gid == id) return {"image/png", png};
    }
    fail(Errc::NotFound, "guide image " + id);
  }
  catalog::ImageId num = 0;
  try {
    size_t used = 0;
    num = std::stoll(id, &used);
    if (used != id.size()) throw std::invalid_argument(id);
  } catch (const std::logic_error&) {
    fail(Errc::NotFound, "image " + id);
  }
  auto rec = catalog_->image(num);
  if (!rec) fail(Errc::NotFound, "image " + id);
  auto dir = catalog_->directory(rec->directoryId);
  if (!dir) fail(Errc::NotFound, "image " + id);
  fs::path full = fs::path(dir->path) / rec->relativePath;
  try {
    return {contentTypeFor(full), readFileBytes(full)};
  } catch (const Error&) {
    fail(Errc::NotFound, "image file missing: " + full.string());
  }
}

DirectoryInfo Backend::addDirectory(const fs::path& path) {
  std::error_code ec;
  auto canonical = fs::canonical(path, ec);
  if (!ec && catalog_->directoryByPath(canonical)) fail(Errc::Conflict, "already registered: " + canonical.string());
  auto entry = indexer_->addDirectory(path);
  return {entry, catalog_->progress(entry.id)};
}

std::vector<DirectoryInfo> Backend::directories() const {
  std::vector<DirectoryInfo> out;
  for (auto& d : catalog_->directories()) out.push_back({d, catalog_->progress(d.id)});
  return out;
}

DirectoryInfo Backend::directory(catalog::DirectoryId id) const {
  auto d = catalog_->directory(id);
  if (!d) fail(Errc::UnknownDirectory, std::to_string(id));
  return {*d, catalog_->progress(id)};
}

DirectoryInfo Backend::setDirectoryEnabled(catalog::DirectoryId id, bool enabled) {
  indexer_->setDirectoryEnabled(id, enabled);
  return directory(id);
}

void Backend::removeDirectory(catalog::DirectoryId id) { indexer_->removeDirectory(id); }

std::string Backend::revisionLocked() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(xxh64(genhub::dumpGenerators(hub_->engines()))));
  return buf;
}

GeneratorConfig Backend::generators() const {
  std::lock_guard lock(genMu_);
  GeneratorConfig cfg;
  cfg.revision = revisionLocked();
  auto st = hub_->status();
  std::stable_sort(st.begin(), st.end(), [](const auto& a, const auto& b) {
    return a.spec.priority != b.spec.priority ? a.spec.priority < b.spec.priority : a.spec.name < b.spec.name;
  });
  for (auto& s : st) cfg.engines.push_back({std::move(s)});
  return cfg;
}

GeneratorConfig Backend::patchGenerators(const GeneratorPatch& patch) {
  {
    std::lock_guard lock(genMu_);
    if (patch.revision && *patch.revision != revisionLocked()) {
      fail(Errc::Conflict, "generator configuration changed (revision " + *patch.revision + " is stale)");
    }
    auto specs = hub_->engines();
    auto find = [&](const std::string& name) -> genhub::EngineSpec& {
      for (auto& s : specs)
        if (s.name == name) return s;
      fail(Errc::InvalidArgument, "unknown generator engine '" + name + "'");
    };
    if (patch.orderedNames) {
      const auto& names = *patch.orderedNames;
      std::set<std::string> seen;
      for (const auto& n : names) {
        find(n);
        if (!seen.insert(n).second) fail(Errc::InvalidArgument, "engine '" + n + "' listed twice");
      }
      if (seen.size() != specs.size()) fail(Errc::InvalidArgument, "orderedNames must list every engine");
    }
    for (const auto& [name, on] : patch.enabled) find(name);

    if (patch.orderedNames) {
      int p = 0;
      for (const auto& n : *patch.orderedNames) find(n).priority = p++;
    }
    for (const auto& [name, on] : patch.enabled) find(name).enabled = on;
    genhub::saveGenerators(opts_.settings.generatorsPath(), specs);
    hub_->setEngines(specs);
  }
  return generators();
}

StatusReport Backend::status() const {
  StatusReport r;
  r.mode = mode_;
  for (const auto& s : activeSpecs_) r.embedders.push_back(s.name);
  r.directories = directories();
  r.generators = generators().engines;
  r.backendVersion = buildVersion();
  r.uiVersion = buildVersion();
  bool catalogUp = true;
  try {
    catalog_->embedders();
  } catch (const std::exception&) {
    catalogUp = false;
  }
  r.services["api"] = true;
  r.services["catalog"] = catalogUp;
  r.services["vecstore"] = store_->flushThreadRunning();
  r.services["indexer"] = indexer_->running();
  if (opts_.watch) r.services["watcher"] = indexer_->watcherRunning();
  r.services["genhub"] = std::any_of(r.generators.begin(), r.generators.end(), [](auto& g) { return g.healthy(); });
  return r;
}

}  // namespace needle::api
