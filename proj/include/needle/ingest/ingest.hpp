#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "needle/catalog/catalog.hpp"

namespace needle::embedders {
class Embedder;
}
namespace needle::vecstore {
class VectorStore;
}

namespace needle::ingest {

using catalog::DirectoryId;

bool isImagePath(const std::filesystem::path& p);

// Recursive walk in lexicographic order. Symlinks are followed; each real
// directory and file (by device and inode) is visited once, so link loops
// terminate. Throws PathNotFound when the root is gone.
std::vector<catalog::ImageRecord> scanDirectory(const catalog::DirectoryEntry& dir);

enum class Priority : int { UserAdd = 0, Watcher = 1, Reconcile = 2 };

enum class WatchKind { Created, Modified, Deleted };
struct WatchEvent {
  WatchKind kind = WatchKind::Created;
  std::filesystem::path path;  // absolute
};

struct ReconcileReport {
  size_t added = 0;
  size_t removed = 0;
  size_t reembedded = 0;
  size_t repaired = 0;  // vector/catalog drift fixed (orphan vectors, indexed records without vectors)
  std::vector<std::string> skippedDirectories;

  bool operator==(const ReconcileReport&) const = default;
};

struct BatchResult {
  size_t indexed = 0;
  size_t failed = 0;
  size_t skipped = 0;  // already indexed, or changed/removed while embedding
};

struct IngestOptions {
  size_t workers = 4;
  size_t batchSize = 50;
  std::chrono::milliseconds debounce{500};
  bool watch = true;
  // Called after every embedBatch call with the number of images passed in.
  std::function<void(DirectoryId, const std::string& embedder, size_t)> onBatch;
};

class DirectoryWatcher;

// Keeps catalog and vector store in step with registered directories.
//
// Work is queued per directory: at most one queued entry (holding the most
// urgent priority) and at most one batch in flight per directory. A task is
// one batch; the directory is re-queued while records stay pending, so
// equal-priority directories interleave.
class Indexer {
 public:
  Indexer(catalog::Catalog& cat, vecstore::VectorStore& store, std::vector<const embedders::Embedder*> embedders,
          IngestOptions opts = {});
  ~Indexer();
  Indexer(const Indexer&) = delete;
  Indexer& operator=(const Indexer&) = delete;

  // Starts workers and, when enabled, the watcher on every enabled directory.
  void start();
  // Finishes in-flight batches and joins all threads. Queued work stays
  // pending in the catalog.
  void stop();

  // Register + scan + enqueue at UserAdd priority.
  catalog::DirectoryEntry addDirectory(const std::filesystem::path& path);
  // Vectors first, then catalog records and the directory entry.
  void removeDirectory(DirectoryId id);
  void setDirectoryEnabled(DirectoryId id, bool enabled);

  // Upserts the scan result for one directory and enqueues it.
  size_t syncDirectory(DirectoryId id, Priority priority);
  void enqueue(DirectoryId id, Priority priority);

  BatchResult processBatch(const std::vector<catalog::ImageRecord>& records);
  void handleWatchEvent(const WatchEvent& event);
  ReconcileReport reconcile();

  // Blocks until the queue is empty and no batch is running.
  bool waitIdle(std::chrono::milliseconds timeout);
  // Directories currently queued, most urgent first (for inspection).
  std::vector<std::pair<DirectoryId, Priority>> queued() const;
  bool running() const;
  bool watcherRunning() const;

 private:
  struct Task {
    int priority;
    uint64_t seq;
    DirectoryId dir;
    bool operator<(const Task& o) const { return priority != o.priority ? priority < o.priority : seq < o.seq; }
  };

  void workerLoop();
  void runTask(DirectoryId dir, int priority);
  void removeImageEverywhere(catalog::ImageId id);
  void onWatcherPath(const std::filesystem::path& path, bool exists);
  std::optional<catalog::DirectoryEntry> owningDirectory(const std::filesystem::path& path) const;

  catalog::Catalog& cat_;
  vecstore::VectorStore& store_;
  std::vector<const embedders::Embedder*> embedders_;
  IngestOptions opts_;

  mutable std::mutex qmu_;
  std::condition_variable qcv_;
  std::set<Task> queue_;
  std::map<DirectoryId, Task> queuedByDir_;
  std::set<DirectoryId> inFlight_;
  uint64_t seq_ = 0;
  bool stopping_ = false;
  bool running_ = false;
  std::vector<std::thread> workers_;

  std::mutex mutateMu_;     // vector inserts + state marks vs deletions
  std::mutex reconcileMu_;  // one reconcile at a time
  std::unique_ptr<DirectoryWatcher> watcher_;
};

// inotify-backed recursive watcher. Paths are reported once their events
// have been quiet for the debounce window; the callback runs on a dispatcher
// thread, never on the reader thread.
class DirectoryWatcher {
 public:
  using Callback = std::function<void(const std::filesystem::path&, bool exists)>;

  DirectoryWatcher(std::chrono::milliseconds debounce, Callback cb);
  ~DirectoryWatcher();

  void addTree(const std::filesystem::path& root);
  void removeTree(const std::filesystem::path& root);
  // While paused, events are collected but not delivered.
  void pause();
  void resume();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace needle::ingest
