#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "needle/vecstore/collection.hpp"

namespace needle::vecstore {

// One collection per embedder under `root/<name>/`. Collections are
// independent; the store only guards its name map.
class VectorStore {
 public:
  explicit VectorStore(std::filesystem::path root);
  ~VectorStore();

  // Idempotent for identical (dim, params); otherwise
  // CollectionExistsWithDifferentParams. Seed defaults to a hash of the name.
  Collection& createCollection(const std::string& name, uint32_t dim, HnswParams params = {},
                               std::optional<uint64_t> seed = std::nullopt);
  Collection& collection(const std::string& name);
  const Collection& collection(const std::string& name) const;
  Collection* find(const std::string& name);
  std::vector<std::string> names() const;

  void flushAll();

  // Background thread that flushes every collection on a fixed cadence.
  void startFlushThread(std::chrono::milliseconds interval = std::chrono::seconds(2));
  void stopFlushThread();
  bool flushThreadRunning() const noexcept { return flushRunning_.load(); }

  const std::filesystem::path& root() const noexcept { return root_; }

 private:
  std::filesystem::path root_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Collection>> collections_;

  std::thread flusher_;
  std::mutex flushMu_;
  std::condition_variable flushCv_;
  bool flushStop_ = false;
  std::atomic<bool> flushRunning_{false};
};

}  // namespace needle::vecstore
