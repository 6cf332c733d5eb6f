#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "needle/common/rwlock.hpp"
#include "needle/vecstore/hnsw.hpp"

namespace needle::vecstore {

struct SearchHit {
  uint64_t id = 0;
  float distance = 0;

  bool operator==(const SearchHit&) const = default;
};

// Fraction of dead nodes that triggers a rebuild of the graph.
inline constexpr double kCompactionDeadRatio = 0.30;

// One embedder's vectors: an HNSW graph plus its on-disk representation.
//
// Directory layout:
//   segments.bin    append-only records: u64 id, then dim x f32 (raw input)
//   tombstones.bin  append-only u64 record indices into segments.bin
//   graph.snap      "NDLV1", u32 dim, u32 M, u32 efConstruction, u64 seed,
//                   u32 efSearch, u8 metric, u64 segment records,
//                   u64 tombstone records, then the link structure
//
// The snapshot is trusted only when its record counts match the segment and
// tombstone files; otherwise the graph is rebuilt by replaying segments.
// Searches take a shared lock; insert/remove/flush/compact are exclusive.
class Collection {
 public:
  // Creates an empty collection in `dir` (which must not hold one yet).
  static std::unique_ptr<Collection> create(const std::filesystem::path& dir, std::string name, uint32_t dim,
                                            HnswParams params, uint64_t seed);
  // Opens the collection stored in `dir`, completing an interrupted compaction.
  static std::unique_ptr<Collection> open(const std::filesystem::path& dir, std::string name);

  ~Collection();
  Collection(const Collection&) = delete;
  Collection& operator=(const Collection&) = delete;

  const std::string& name() const noexcept { return name_; }
  uint32_t dim() const noexcept { return dim_; }
  const HnswParams& params() const noexcept { return params_; }
  uint64_t seed() const noexcept { return seed_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }

  size_t count() const;
  bool contains(uint64_t id) const;
  std::vector<uint64_t> liveIds() const;

  void insert(uint64_t id, std::span<const float> vec);
  void remove(uint64_t id);

  std::vector<SearchHit> search(std::span<const float> query, size_t k, size_t efSearch) const;
  std::vector<SearchHit> search(std::span<const float> query, size_t k) const {
    return search(query, k, params_.efSearch);
  }
  std::vector<SearchHit> exactSearch(std::span<const float> query, size_t k) const;

  // Syncs the append files and rewrites the snapshot if anything changed.
  void flush();
  void compact();

  // Read-only view for invariant checks in tests.
  template <typename Fn>
  auto withGraph(Fn&& fn) const {
    std::shared_lock lock(mu_);
    return fn(*graph_);
  }

 private:
  Collection(std::filesystem::path dir, std::string name, uint32_t dim, HnswParams params, uint64_t seed);

  std::vector<float> prepare(std::span<const float> vec) const;
  std::vector<float> prepareQuery(std::span<const float> query) const;
  void openAppendFiles();
  void closeAppendFiles();
  void writeSnapshot(const std::filesystem::path& path, const HnswGraph& graph, uint64_t segmentRecords,
                     uint64_t tombstoneRecords) const;
  void loadFromDisk();
  void compactLocked();
  std::vector<SearchHit> toHits(const std::vector<kernels::ScoredIndex>& scored) const;

  std::filesystem::path dir_;
  std::string name_;
  uint32_t dim_;
  HnswParams params_;
  uint64_t seed_;

  mutable RwLock mu_;
  std::unique_ptr<HnswGraph> graph_;
  std::vector<float> raw_;  // inserted vectors as given, parallel to graph nodes
  std::unordered_map<uint64_t, uint32_t> live_;
  uint64_t tombstoneRecords_ = 0;
  bool dirty_ = false;
  std::FILE* segments_ = nullptr;
  std::FILE* tombstones_ = nullptr;
};

}  // namespace needle::vecstore
