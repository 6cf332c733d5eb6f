#include <sys/stat.h>

#include <algorithm>
#include <spdlog/spdlog.h>
#include <unordered_set>

#include "needle/common/error.hpp"
#include "needle/common/hash.hpp"
#include "needle/common/image.hpp"
#include "needle/embedders/embedder.hpp"
#include "needle/ingest/ingest.hpp"
#include "needle/vecstore/store.hpp"

namespace fs = std::filesystem;
using needle::catalog::ImageRecord;
using needle::catalog::IndexState;

namespace needle::ingest {

namespace {

bool isPendingFor(const ImageRecord& r, const std::string& embedder) {
  auto it = r.indexState.find(embedder);
  return it == r.indexState.end() || it->second == IndexState::Pending;
}

std::optional<ImageRecord> statRecord(const fs::path& full, DirectoryId dir, const std::string& rel) {
  struct stat st {};
  if (::stat(full.c_str(), &st) != 0 || !S_ISREG(st.st_mode)) return std::nullopt;
  ImageRecord r;
  r.directoryId = dir;
  r.relativePath = rel;
  try {
    r.contentHash = hashFile(full);
  } catch (const std::exception&) {
    return std::nullopt;
  }
  r.byteSize = static_cast<uint64_t>(st.st_size);
  r.mtime = int64_t{st.st_mtim.tv_sec} * 1'000'000'000 + st.st_mtim.tv_nsec;
  return r;
}

bool hasPending(const catalog::Catalog& cat, DirectoryId dir) { return !cat.listPendingAny(dir, 1).empty(); }

}  // namespace

Indexer::Indexer(catalog::Catalog& cat, vecstore::VectorStore& store, std::vector<const embedders::Embedder*> embedders,
                 IngestOptions opts)
    : cat_(cat), store_(store), embedders_(std::move(embedders)), opts_(std::move(opts)) {
  if (opts_.batchSize == 0) fail(Errc::InvalidArgument, "batch size must be positive");
  if (opts_.workers == 0) fail(Errc::InvalidArgument, "worker count must be positive");
  std::vector<std::string> names;
  for (const auto* e : embedders_) {
    names.push_back(e->spec().name);
    store_.collection(e->spec().name);  // must exist; throws UnknownCollection
  }
  cat_.setEmbedders(names);
}

Indexer::~Indexer() { stop(); }

void Indexer::start() {
  {
    std::lock_guard lock(qmu_);
    if (running_) return;
    running_ = true;
    stopping_ = false;
  }
  if (opts_.watch) {
    watcher_ = std::make_unique<DirectoryWatcher>(
        opts_.debounce, [this](const fs::path& p, bool exists) { onWatcherPath(p, exists); });
    for (const auto& d : cat_.directories()) {
      if (d.enabled) watcher_->addTree(d.path);
    }
  }
  for (size_t i = 0; i < opts_.workers; ++i) workers_.emplace_back([this] { workerLoop(); });
}

void Indexer::stop() {
  if (watcher_) {
    watcher_->stop();
    watcher_.reset();
  }
  {
    std::lock_guard lock(qmu_);
    if (!running_) return;
    stopping_ = true;
  }
  qcv_.notify_all();
  for (auto& t : workers_) t.join();
  workers_.clear();
  std::lock_guard lock(qmu_);
  running_ = false;
}

bool Indexer::running() const {
  std::lock_guard lock(qmu_);
  return running_ && !stopping_;
}

bool Indexer::watcherRunning() const { return watcher_ && watcher_->running(); }

catalog::DirectoryEntry Indexer::addDirectory(const fs::path& path) {
  auto entry = cat_.registerDirectory(path);
  if (!entry.enabled) return entry;
  if (watcher_) watcher_->addTree(entry.path);
  syncDirectory(entry.id, Priority::UserAdd);
  return *cat_.directory(entry.id);
}

void Indexer::removeDirectory(DirectoryId id) {
  auto d = cat_.directory(id);
  if (!d) fail(Errc::UnknownDirectory, std::to_string(id));
  if (watcher_) watcher_->removeTree(d->path);
  {
    std::lock_guard lock(qmu_);
    if (auto it = queuedByDir_.find(id); it != queuedByDir_.end()) {
      queue_.erase(it->second);
      queuedByDir_.erase(it);
    }
  }
  std::lock_guard lock(mutateMu_);
  for (const auto& r : cat_.images(id)) {
    for (const auto* e : embedders_) {
      auto& col = store_.collection(e->spec().name);
      if (col.contains(static_cast<uint64_t>(r.id))) col.remove(static_cast<uint64_t>(r.id));
    }
  }
  cat_.removeDirectory(id);
}

void Indexer::setDirectoryEnabled(DirectoryId id, bool enabled) {
  auto d = cat_.directory(id);
  if (!d) fail(Errc::UnknownDirectory, std::to_string(id));
  cat_.setDirectoryEnabled(id, enabled);
  if (enabled == d->enabled) return;
  if (enabled) {
    if (watcher_) watcher_->addTree(d->path);
    syncDirectory(id, Priority::UserAdd);
  } else if (watcher_) {
    // Queued tasks for a disabled directory are dropped by the worker; the
    // records stay pending and vectors stay in place.
    watcher_->removeTree(d->path);
  }
}

size_t Indexer::syncDirectory(DirectoryId id, Priority priority) {
  auto d = cat_.directory(id);
  if (!d) fail(Errc::UnknownDirectory, std::to_string(id));
  auto found = scanDirectory(*d);
  for (const auto& r : found) cat_.upsertImage(r);
  enqueue(id, priority);
  return found.size();
}

void Indexer::enqueue(DirectoryId id, Priority priority) {
  std::lock_guard lock(qmu_);
  int p = static_cast<int>(priority);
  if (auto it = queuedByDir_.find(id); it != queuedByDir_.end()) {
    if (it->second.priority <= p) return;
    queue_.erase(it->second);
    queuedByDir_.erase(it);
  }
  Task t{p, seq_++, id};
  queue_.insert(t);
  queuedByDir_.emplace(id, t);
  qcv_.notify_all();
}

std::vector<std::pair<DirectoryId, Priority>> Indexer::queued() const {
  std::lock_guard lock(qmu_);
  std::vector<std::pair<DirectoryId, Priority>> out;
  for (const auto& t : queue_) out.emplace_back(t.dir, static_cast<Priority>(t.priority));
  return out;
}

bool Indexer::waitIdle(std::chrono::milliseconds timeout) {
  std::unique_lock lock(qmu_);
  return qcv_.wait_for(lock, timeout, [&] { return queue_.empty() && inFlight_.empty(); });
}

void Indexer::workerLoop() {
  std::unique_lock lock(qmu_);
  while (true) {
    if (stopping_) return;
    auto pick = std::find_if(queue_.begin(), queue_.end(), [&](const Task& t) { return !inFlight_.count(t.dir); });
    if (pick == queue_.end()) {
      qcv_.wait(lock);
      continue;
    }
    Task t = *pick;
    queue_.erase(pick);
    queuedByDir_.erase(t.dir);
    inFlight_.insert(t.dir);
    lock.unlock();
    try {
      runTask(t.dir, t.priority);
    } catch (const std::exception& e) {
      spdlog::error("index task for directory {} failed: {}", t.dir, e.what());
    }
    lock.lock();
    inFlight_.erase(t.dir);
    qcv_.notify_all();
  }
}

void Indexer::runTask(DirectoryId dir, int priority) {
  auto d = cat_.directory(dir);
  if (!d || !d->enabled) return;
  auto records = cat_.listPendingAny(dir, opts_.batchSize);
  if (records.empty()) return;
  BatchResult r = processBatch(records);
  bool progressed = r.indexed + r.failed + r.skipped > 0;
  if (!progressed) {
    spdlog::warn("directory {}: batch made no progress, leaving it for the next reconcile", dir);
    return;
  }
  if (hasPending(cat_, dir)) enqueue(dir, static_cast<Priority>(priority));
}

BatchResult Indexer::processBatch(const std::vector<ImageRecord>& input) {
  BatchResult res;
  if (input.size() > opts_.batchSize) fail(Errc::BatchTooLarge, std::to_string(input.size()));

  struct Item {
    ImageRecord rec;
    ImagePixels pixels;
    bool ok = false;
    bool failedAny = false;
    bool markedAny = false;
  };
  std::vector<Item> items;
  items.reserve(input.size());
  std::map<DirectoryId, std::optional<catalog::DirectoryEntry>> dirs;

  // Decode once; every embedder below shares the pixels.
  for (const auto& in : input) {
    Item it{in, {}, false};
    auto& d = dirs[in.directoryId];
    if (!d) d = cat_.directory(in.directoryId);
    if (!d) {
      ++res.skipped;
      continue;
    }
    fs::path full = fs::path(d->path) / in.relativePath;
    try {
      auto bytes = readFileBytes(full);
      uint64_t h = xxh64(bytes);
      if (h != it.rec.contentHash) {
        // Changed since it was catalogued: record the new bytes first.
        auto fresh = statRecord(full, in.directoryId, in.relativePath);
        if (fresh) {
          fresh->contentHash = h;
          it.rec = cat_.upsertImage(*fresh);
        }
      }
      it.pixels = decodeImage(bytes);
      it.ok = true;
    } catch (const std::exception& e) {
      spdlog::warn("cannot decode {}: {}", full.string(), e.what());
      for (const auto* e2 : embedders_) {
        const auto& name = e2->spec().name;
        if (isPendingFor(it.rec, name)) cat_.setIndexStateIf(it.rec.id, name, IndexState::Failed, it.rec.contentHash);
      }
      ++res.failed;
      continue;
    }
    items.push_back(std::move(it));
  }

  for (const auto* emb : embedders_) {
    const auto& name = emb->spec().name;
    std::vector<size_t> idx;
    for (size_t i = 0; i < items.size(); ++i) {
      if (isPendingFor(items[i].rec, name)) idx.push_back(i);
    }
    if (idx.empty()) continue;
    std::vector<ImagePixels> batch;
    batch.reserve(idx.size());
    for (size_t i : idx) batch.push_back(items[i].pixels);

    std::vector<std::vector<float>> vecs;
    try {
      vecs = emb->embedBatch(batch, opts_.batchSize);
    } catch (const std::exception& e) {
      spdlog::error("embedder {} failed on a batch of {}: {}", name, batch.size(), e.what());
      for (size_t i : idx) {
        cat_.setIndexStateIf(items[i].rec.id, name, IndexState::Failed, items[i].rec.contentHash);
        items[i].failedAny = true;
      }
      continue;
    }
    if (opts_.onBatch) opts_.onBatch(items[idx.front()].rec.directoryId, name, batch.size());

    auto& col = store_.collection(name);
    std::lock_guard lock(mutateMu_);
    for (size_t j = 0; j < idx.size(); ++j) {
      auto& item = items[idx[j]];
      auto current = cat_.image(item.rec.id);
      if (!current || current->contentHash != item.rec.contentHash) continue;  // deleted or changed meanwhile
      if (!isPendingFor(*current, name)) continue;
      auto id = static_cast<uint64_t>(item.rec.id);
      // A leftover vector belongs to older bytes (or to a batch that died
      // before marking); replace it rather than duplicate it.
      if (col.contains(id)) col.remove(id);
      col.insert(id, vecs[j]);
      if (cat_.setIndexStateIf(item.rec.id, name, IndexState::Indexed, item.rec.contentHash)) item.markedAny = true;
    }
  }

  for (const auto& it : items) {
    if (it.failedAny) {
      ++res.failed;
    } else if (it.markedAny) {
      ++res.indexed;
    } else {
      ++res.skipped;
    }
  }
  return res;
}

void Indexer::removeImageEverywhere(catalog::ImageId id) {
  for (const auto* e : embedders_) {
    auto& col = store_.collection(e->spec().name);
    if (col.contains(static_cast<uint64_t>(id))) col.remove(static_cast<uint64_t>(id));
  }
  cat_.removeImage(id);
}

std::optional<catalog::DirectoryEntry> Indexer::owningDirectory(const fs::path& path) const {
  std::optional<catalog::DirectoryEntry> best;
  const auto& p = path.native();
  for (const auto& d : cat_.directories()) {
    if (!d.enabled) continue;
    const auto& root = d.path;
    bool under = p.size() > root.size() && p.compare(0, root.size(), root) == 0 && p[root.size()] == '/';
    if (under && (!best || root.size() > best->path.size())) best = d;
  }
  return best;
}

void Indexer::onWatcherPath(const fs::path& path, bool exists) {
  handleWatchEvent({exists ? WatchKind::Modified : WatchKind::Deleted, path});
}

void Indexer::handleWatchEvent(const WatchEvent& event) {
  auto dir = owningDirectory(event.path);
  if (!dir) {
    spdlog::info("ignoring event for unregistered path {}", event.path.string());
    return;
  }
  std::string rel = event.path.lexically_relative(dir->path).generic_string();
  std::error_code ec;
  bool gone = event.kind == WatchKind::Deleted || !fs::exists(event.path, ec);

  if (gone) {
    // The path may have been a file or a whole subtree.
    std::string prefix = rel + "/";
    std::lock_guard lock(mutateMu_);
    for (const auto& r : cat_.images(dir->id)) {
      if (r.relativePath == rel || r.relativePath.compare(0, prefix.size(), prefix) == 0) removeImageEverywhere(r.id);
    }
    return;
  }

  if (fs::is_directory(event.path, ec)) {
    catalog::DirectoryEntry sub = *dir;
    sub.path = event.path.string();
    for (auto r : scanDirectory(sub)) {
      r.relativePath = rel + "/" + r.relativePath;
      cat_.upsertImage(r);
    }
  } else {
    if (!isImagePath(event.path)) return;
    auto r = statRecord(event.path, dir->id, rel);
    if (!r) return;
    cat_.upsertImage(*r);
  }
  if (hasPending(cat_, dir->id)) enqueue(dir->id, Priority::Watcher);
}

ReconcileReport Indexer::reconcile() {
  std::lock_guard rlock(reconcileMu_);
  struct Pause {
    DirectoryWatcher* w;
    explicit Pause(DirectoryWatcher* w) : w(w) {
      if (w) w->pause();
    }
    ~Pause() {
      if (w) w->resume();
    }
  } pause(watcher_.get());

  ReconcileReport rep;
  std::vector<DirectoryId> touched;
  for (const auto& d : cat_.directories()) {
    if (!d.enabled) continue;
    std::vector<ImageRecord> disk;
    try {
      disk = scanDirectory(d);
    } catch (const Error& e) {
      spdlog::warn("reconcile: skipping {}: {}", d.path, e.what());
      rep.skippedDirectories.push_back(d.path);
      continue;
    }
    std::map<std::string, ImageRecord> known;
    for (auto& r : cat_.images(d.id)) known.emplace(r.relativePath, std::move(r));

    for (const auto& r : disk) {
      auto it = known.find(r.relativePath);
      if (it == known.end()) {
        cat_.upsertImage(r);
        ++rep.added;
      } else {
        if (it->second.contentHash != r.contentHash) {
          ++rep.reembedded;
          cat_.upsertImage(r);
        } else if (it->second.byteSize != r.byteSize || it->second.mtime != r.mtime) {
          cat_.upsertImage(r);
        }
        known.erase(it);
      }
    }
    {
      std::lock_guard lock(mutateMu_);
      for (const auto& [rel, r] : known) {
        removeImageEverywhere(r.id);
        ++rep.removed;
      }
    }
    touched.push_back(d.id);
  }

  // Vector/catalog drift left by a crash between the two stores.
  {
    std::lock_guard lock(mutateMu_);
    auto all = cat_.allImages();
    std::unordered_set<uint64_t> ids;
    for (const auto& r : all) ids.insert(static_cast<uint64_t>(r.id));
    for (const auto* e : embedders_) {
      const auto& name = e->spec().name;
      auto& col = store_.collection(name);
      for (uint64_t id : col.liveIds()) {
        if (!ids.count(id)) {
          col.remove(id);
          ++rep.repaired;
        }
      }
      for (const auto& r : all) {
        auto st = r.indexState.find(name);
        if (st != r.indexState.end() && st->second == IndexState::Indexed && !col.contains(static_cast<uint64_t>(r.id))) {
          cat_.setIndexState(r.id, name, IndexState::Pending);
          ++rep.repaired;
        }
      }
    }
  }

  for (DirectoryId id : touched) {
    if (hasPending(cat_, id)) enqueue(id, Priority::Reconcile);
  }
  return rep;
}

}  // namespace needle::ingest
