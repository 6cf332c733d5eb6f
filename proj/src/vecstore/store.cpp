#include "needle/vecstore/store.hpp"

#include <spdlog/spdlog.h>

#include "needle/common/error.hpp"
#include "needle/common/hash.hpp"

namespace needle::vecstore {

namespace fs = std::filesystem;

namespace {

void checkName(const std::string& name) {
  if (name.empty() || name.size() > 128) fail(Errc::InvalidArgument, "bad collection name '" + name + "'");
  for (char c : name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) {
      fail(Errc::InvalidArgument, "bad collection name '" + name + "'");
    }
  }
  if (name == "." || name == "..") fail(Errc::InvalidArgument, "bad collection name '" + name + "'");
}

}  // namespace

VectorStore::VectorStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_);
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / "graph.snap")) continue;
    auto name = entry.path().filename().string();
    collections_[name] = Collection::open(entry.path(), name);
  }
}

VectorStore::~VectorStore() {
  stopFlushThread();
  std::lock_guard lock(mu_);
  collections_.clear();
}

Collection& VectorStore::createCollection(const std::string& name, uint32_t dim, HnswParams params,
                                          std::optional<uint64_t> seed) {
  checkName(name);
  if (dim == 0) fail(Errc::InvalidDim, "dimension must be >= 1");
  params.validate();
  std::lock_guard lock(mu_);
  if (auto it = collections_.find(name); it != collections_.end()) {
    auto& c = *it->second;
    if (c.dim() != dim || !(c.params() == params) || (seed && *seed != c.seed())) {
      fail(Errc::CollectionExistsWithDifferentParams,
           "collection " + name + " exists with dim " + std::to_string(c.dim()));
    }
    return c;
  }
  auto c = Collection::create(root_ / name, name, dim, params, seed.value_or(xxh64(name)));
  auto& ref = *c;
  collections_[name] = std::move(c);
  return ref;
}

Collection& VectorStore::collection(const std::string& name) {
  std::lock_guard lock(mu_);
  auto it = collections_.find(name);
  if (it == collections_.end()) fail(Errc::UnknownCollection, name);
  return *it->second;
}

const Collection& VectorStore::collection(const std::string& name) const {
  std::lock_guard lock(mu_);
  auto it = collections_.find(name);
  if (it == collections_.end()) fail(Errc::UnknownCollection, name);
  return *it->second;
}

Collection* VectorStore::find(const std::string& name) {
  std::lock_guard lock(mu_);
  auto it = collections_.find(name);
  return it == collections_.end() ? nullptr : it->second.get();
}

std::vector<std::string> VectorStore::names() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, c] : collections_) out.push_back(name);
  return out;
}

void VectorStore::flushAll() {
  std::vector<Collection*> all;
  {
    std::lock_guard lock(mu_);
    for (auto& [name, c] : collections_) all.push_back(c.get());
  }
  for (auto* c : all) c->flush();
}

void VectorStore::startFlushThread(std::chrono::milliseconds interval) {
  if (flushRunning_) return;
  {
    std::lock_guard lock(flushMu_);
    flushStop_ = false;
  }
  flushRunning_ = true;
  flusher_ = std::thread([this, interval] {
    std::unique_lock lock(flushMu_);
    while (!flushCv_.wait_for(lock, interval, [this] { return flushStop_; })) {
      lock.unlock();
      try {
        flushAll();
      } catch (const std::exception& e) {
        spdlog::error("vector flush failed: {}", e.what());
      }
      lock.lock();
    }
    flushRunning_ = false;
  });
}

void VectorStore::stopFlushThread() {
  {
    std::lock_guard lock(flushMu_);
    flushStop_ = true;
  }
  flushCv_.notify_all();
  if (flusher_.joinable()) flusher_.join();
  flushRunning_ = false;
}

}  // namespace needle::vecstore
